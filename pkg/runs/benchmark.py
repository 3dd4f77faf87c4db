"""
Robustness of the contrastive embeddings to missing events, the label-fraction fine-tuning study and the clustering
of the group embeddings against their tags.
"""
import math
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
from tabulate import tabulate

from classes.data_structures import MetricReport
from classes.exceptions import CascadeError
from datasets.cascade import CascadeGroup, total_count
from datasets.reconstruction import downsample
from datasets.synthetic import SyntheticBenchConfig, generate_synthetic_groups
from models.icth import ICTH, ICTHConfig
from runs.finetune import HeadConfig, HeadTask, finetune_classify
from runs.pretrain import ContrastiveConfig, half_embeddings, make_pairs, pretrain
from utils.clustering import jaccard_matrix, kmeans
from utils.logger import logger
from utils.metrics import knn_accuracy, pair_retrieval, silhouette
from utils.output import atomic_write, export_embeddings, run_directory, save_results
from utils.settings import settings
from utils.timer import SectionTimer


def cascade_seed(seed: int, group_index: int, cascade_index: int) -> int:
    """ Removal seed of one cascade, shared by every removal probability so the removal sets are nested. """
    return int(np.random.SeedSequence([seed, group_index, cascade_index]).generate_state(1)[0])


def downsample_groups(groups: Sequence[CascadeGroup], p_missing: float, seed: int) -> List[CascadeGroup]:
    """
    Down-sample every cascade of the groups with the same per-cascade seeds whatever the probability.

    :raise CascadeError: If a down-sampled cascade doesn't keep the total count of the original one.
    """
    result = []
    for group_index, group in enumerate(groups):
        cascades = []
        for cascade_index, cascade in enumerate(group.cascades):
            sampled = downsample(cascade, p_missing, cascade_seed(seed, group_index, cascade_index))
            if total_count(sampled) != total_count(cascade):
                raise CascadeError(f'Down-sampling changed the total count of cascade "{cascade.id}" '
                                   f'({total_count(cascade)} -> {total_count(sampled)})')
            cascades.append(sampled)
        result.append(group.with_cascades(cascades))
    return result


def evaluate_embeddings(model: ICTH, groups: Sequence[CascadeGroup], seed: int, knn_k: int) -> Dict[str, float]:
    """
    :return: Pair retrieval accuracy of the epoch 0 halves, leave-one-out k-NN accuracy and silhouette of the group
        labels.
    """
    with torch.no_grad():
        first, second = half_embeddings(model, make_pairs(groups, seed, epoch=0))
        embeddings = model.group_embeddings([g.cascades for g in groups]).cpu().numpy()
    labels = [g.label for g in groups]
    return {'retrieval_accuracy': pair_retrieval(first, second),
            'knn_accuracy': knn_accuracy(embeddings, labels, min(knn_k, len(groups) - 1)),
            'silhouette': silhouette(embeddings, labels)}


def run_downsampling_benchmark(bench_config: Optional[SyntheticBenchConfig] = None,
                               contrastive_config: Optional[ContrastiveConfig] = None,
                               model_config: Optional[ICTHConfig] = None,
                               out_dir: Optional[Union[str, Path]] = None,
                               groups: Optional[Sequence[CascadeGroup]] = None,
                               knn_k: int = 5) -> List[MetricReport]:
    """
    Generate the synthetic groups once, then for each removal probability: down-sample the same cascades, pre-train a
    new backbone (same initial weights) and measure how separable the group embeddings stay.

    :param bench_config: The corpus and the removal probabilities, from the settings if not set.
    :param contrastive_config: The pre-training configuration, from the settings if not set.
    :param model_config: The backbone configuration, from the settings if not set.
    :param out_dir: If set, the group embeddings of each probability are exported in this directory.
    :param groups: Labeled groups to use instead of generating the synthetic corpus.
    :param knn_k: The number of neighbours of the k-NN accuracy.
    :return: One report per removal probability, in the configured order.
    """
    bench_config = bench_config or SyntheticBenchConfig.from_settings()
    contrastive_config = contrastive_config or ContrastiveConfig.from_settings()
    model_config = model_config or ICTHConfig.from_settings()
    groups = list(groups) if groups is not None else generate_synthetic_groups(bench_config)

    reports = []
    for p_missing in bench_config.p_missing:
        with SectionTimer(f'benchmark P_m={p_missing:g}') as timer:
            sampled = downsample_groups(groups, p_missing, bench_config.seed)
            torch.manual_seed(contrastive_config.seed)
            model = ICTH(model_config)
            result = pretrain(model, sampled, contrastive_config)
            metrics = evaluate_embeddings(model, sampled, contrastive_config.seed, knn_k)

            embeddings_file = None
            if out_dir is not None:
                embeddings_file = str(Path(out_dir) / f'embeddings_p{p_missing:.2f}.tsv')
                with torch.no_grad():
                    embeddings = model.group_embeddings([g.cascades for g in sampled]).cpu().numpy()
                export_embeddings(embeddings, [g.group_id for g in sampled], [g.label for g in sampled],
                                  embeddings_file)

        reports.append(MetricReport(p_missing=float(p_missing), nb_groups=len(sampled),
                                    total_events=sum(sum(c.nb_events for c in g.cascades) for g in sampled),
                                    final_loss=result.best_loss, runtime=timer.last,
                                    embeddings_file=embeddings_file, **metrics))
        logger.info(f'P_m={p_missing:g}: retrieval {metrics["retrieval_accuracy"]:.3f}, '
                    f'knn {metrics["knn_accuracy"]:.3f}, silhouette {metrics["silhouette"]:.3f}')

    logger.info('Down-sampling benchmark:\n' + tabulate(
        [(r.p_missing, r.total_events, r.retrieval_accuracy, r.knn_accuracy, r.silhouette, r.final_loss)
         for r in reports],
        headers=['P_m', 'events', 'retrieval', 'knn', 'silhouette', 'loss'], floatfmt='.4f'))
    save_results(benchmark=[asdict(r) for r in reports])
    return reports


def benchmark_report(reports: Sequence[MetricReport], include_runtime: bool = False) -> Dict:
    """ :return: The JSON content of the benchmark report (the runtime breaks byte-identical outputs). """
    entries = []
    for report in reports:
        entry = asdict(report)
        if not include_runtime:
            del entry['runtime']
        entries.append(entry)
    return {'reports': entries}


def run_label_fraction_study(groups: Sequence[CascadeGroup], fractions: Optional[Sequence[float]] = None,
                             repeats: Optional[int] = None,
                             head_config: Optional[HeadConfig] = None,
                             contrastive_config: Optional[ContrastiveConfig] = None,
                             model_config: Optional[ICTHConfig] = None) -> pd.DataFrame:
    """
    Fine-tune classifiers on a fraction of the training split, with a contrastively pre-trained backbone and with
    the same backbone before pre-training. Each fraction is repeated with different split seeds.
    The table is also written in the run directory (label_fraction_study.tsv) when the run is named.

    :param groups: The labeled groups.
    :param fractions: The fractions of the training split, from the settings if not set.
    :param repeats: The number of split seeds per fraction, from the settings if not set.
    :return: One row per (fraction, pre-trained) with the mean and standard deviation of the test macro-F1.
    """
    head_config = head_config or HeadConfig.from_settings(HeadTask.CLASSIFY)
    contrastive_config = contrastive_config or ContrastiveConfig.from_settings()
    model_config = model_config or ICTHConfig.from_settings()
    fractions = list(settings.label_fractions if fractions is None else fractions)
    repeats = settings.label_fraction_repeats if repeats is None else repeats
    if repeats < 1 or len(fractions) == 0:
        raise ValueError('At least one fraction and one repeat are required')

    torch.manual_seed(contrastive_config.seed)
    untrained = ICTH(model_config)
    pretrained = ICTH(model_config)
    pretrained.load_state_dict(untrained.state_dict())
    pretrain(pretrained, groups, contrastive_config)

    rows = []
    with SectionTimer('label fraction study'):
        for fraction in fractions:
            for is_pretrained, model in ((True, pretrained), (False, untrained)):
                scores = []
                for repeat in range(repeats):
                    config = replace(head_config, train_fraction=fraction, seed=head_config.seed + repeat,
                                     unfreeze=False)
                    _, report = finetune_classify(model, groups, config)
                    scores.append(report.test_metrics.f1)
                rows.append({'fraction': float(fraction), 'pretrained': is_pretrained,
                             'mean_f1': float(np.mean(scores)), 'std_f1': float(np.std(scores)),
                             'nb_repeats': repeats})

    table = pd.DataFrame(rows, columns=['fraction', 'pretrained', 'mean_f1', 'std_f1', 'nb_repeats'])
    logger.info('Label fraction study:\n' + tabulate(table, headers='keys', showindex=False, floatfmt='.4f'))
    save_results(label_fraction_study=table.to_dict(orient='records'))

    run_dir = run_directory()
    if run_dir is not None:
        with atomic_write(run_dir / 'label_fraction_study.tsv') as f:
            table.to_csv(f, sep='\t', index=False, float_format='%.17g', lineterminator='\n')
    return table


def cluster_groups(model: ICTH, groups: Sequence[CascadeGroup], nb_clusters: int, seed: int) -> Dict:
    """
    Cluster the group embeddings with k-means, then compare the tag sets of the groups within and across clusters.

    :param model: The backbone computing the group embeddings.
    :param groups: The groups to cluster (tags are optional).
    :param nb_clusters: The number of clusters, at most the number of groups.
    :param seed: The seed of the k-means initialization.
    :return: The JSON content of the clustering report.
    """
    with torch.no_grad():
        embeddings = model.group_embeddings([g.cascades for g in groups]).cpu().numpy()
    result = kmeans(embeddings, nb_clusters, seed)
    summary = jaccard_matrix([g.tags for g in groups], result.assignments)
    sizes = np.bincount(result.assignments, minlength=nb_clusters)

    # NaN when no pair falls in the category
    jaccard_stats = {name: None if math.isnan(value) else value
                     for name, value in (('intra_mean', summary.intra_mean), ('intra_std', summary.intra_std),
                                         ('inter_mean', summary.inter_mean), ('inter_std', summary.inter_std))}
    jaccard_stats.update(nb_intra=summary.nb_intra, nb_inter=summary.nb_inter, nb_skipped=summary.nb_skipped)

    logger.info(f'{nb_clusters} cluster(s) of {len(groups)} group(s):\n' + tabulate(
        [(cluster, size) for cluster, size in enumerate(sizes)], headers=['cluster', 'groups']))
    logger.info(f'Tag Jaccard similarity: intra {summary.intra_mean:.4f} ± {summary.intra_std:.4f}, '
                f'inter {summary.inter_mean:.4f} ± {summary.inter_std:.4f}')

    report = {'nb_clusters': nb_clusters,
              'nb_iterations': result.nb_iterations,
              'inertia': result.inertia_history[-1],
              'cluster_sizes': sizes.tolist(),
              'assignments': {g.group_id: int(a) for g, a in zip(groups, result.assignments)},
              'jaccard': jaccard_stats}
    save_results(clustering=report)
    return report
