"""
Command line entry point: one subcommand per operation, every setting is also a flag.
Exit codes: 0 success, 1 validation error (bad input, bad settings, bad usage), 2 runtime failure.
"""
import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import configargparse
import numpy as np
import torch
from codetiming import Timer

from datasets.cascade import CascadeGroup
from datasets.cascade_io import read_groups, read_raw_cascades, write_groups
from datasets.reconstruction import drop_missing_counts, events_to_intervals, reconstruct_groups
from datasets.synthetic import SyntheticBenchConfig, generate_synthetic_groups
from models.icth import ICTH, ICTHConfig, load_checkpoint, save_checkpoint
from models.parametric import Family, ParametricModel, simulate
from models.parametric_fit import FitConfig, fit
from runs.benchmark import (benchmark_report, cluster_groups, downsample_groups, run_downsampling_benchmark,
                            run_label_fraction_study)
from runs.finetune import HeadConfig, HeadTask, finetune_classify, finetune_popularity
from runs.grad_check import GRAD_CHECK_LOSSES, TOLERANCE, grad_check
from runs.pretrain import ContrastiveConfig, pretrain
from utils.logger import logger
from utils.misc import configure_threads, fix_seed, yaml_preprocess
from utils.output import atomic_write, export_embeddings, init_out_directory, save_timers
from utils.settings import Settings, settings
from utils.timer import SectionTimer

COMMANDS = ('simulate', 'reconstruct', 'downsample', 'fit', 'pretrain', 'finetune-classify', 'finetune-popularity',
            'benchmark', 'embed', 'cluster', 'gradcheck')

# Extra option strings of some settings
ALIASES = {'model_family': ('--family',), 'model_kernel': ('--kernel',)}


class UsageError(ValueError):
    """ The command line doesn't follow the flag grammar. """


class _ArgParser(configargparse.ArgParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def str_to_bool(arg_value: str) -> bool:
    """
    Used to handle boolean settings.

    :param arg_value: The boolean value as a string.
    :return: The parsed value.
    """
    if isinstance(arg_value, bool):
        return arg_value
    if arg_value.lower() in {'false', 'f', '0', 'no', 'n'}:
        return False
    elif arg_value.lower() in {'true', 't', '1', 'yes', 'y'}:
        return True
    raise argparse.ArgumentTypeError(f'{arg_value} is not a valid boolean value')


def _is_sequence(value: Any) -> bool:
    return isinstance(value, (list, tuple))


def _type_mapping(value: Any) -> Callable:
    if isinstance(value, bool):
        return str_to_bool
    if _is_sequence(value):
        return _type_mapping(value[0]) if len(value) > 0 else str
    if isinstance(value, (int, float)):
        return type(value)
    return str


def build_parser() -> configargparse.ArgParser:
    """
    :return: The parser of every subcommand. Each setting field is a flag (--name-with-dashes or
        --name_with_underscores) that can also be set in the YAML or JSON configuration file (--config).
    """
    p = _ArgParser(prog='start_icth.py', description='Interval-censored transformer Hawkes toolkit',
                   config_file_parser_class=configargparse.YAMLConfigFileParser)

    p.add_argument('command', choices=COMMANDS, help='the operation to run')
    p.add_argument('--config', is_config_file=True, help='path to a YAML or JSON configuration file')
    p.add_argument('--out', help='output file')
    p.add_argument('--input', help='input file (cascade groups or raw events)')
    p.add_argument('--checkpoint', help='IC-TH checkpoint to start from')
    p.add_argument('--verbose', action='store_true', help='show debug messages in the console')
    p.add_argument('--p-missing', type=float, help='removal probability of the "downsample" command')
    p.add_argument('--embeddings-dir', help='directory of the embeddings exported by "benchmark"')
    p.add_argument('--loss', default='all', choices=('all',) + tuple(GRAD_CHECK_LOSSES),
                   help='loss checked by "gradcheck"')
    p.add_argument('--tiny', action='store_true', help='use the tiny double precision model in "gradcheck"')

    for f in fields(Settings):
        default = f.default
        options = [f'--{f.name.replace("_", "-")}']
        if '_' in f.name:
            options.append(f'--{f.name}')
        options.extend(ALIASES.get(f.name, ()))
        kwargs: Dict[str, Any] = {'dest': f.name, 'default': None, 'type': _type_mapping(default)}
        if isinstance(default, bool):
            kwargs.update(nargs='?', const=True)
        elif _is_sequence(default):
            kwargs.update(action='append')
        if f.name == 'threads':
            kwargs.update(env_var='ICTH_THREADS')
        p.add_argument(*options, **kwargs)

    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse the command line, run the subcommand and map the outcome to an exit code.

    :param argv: The arguments (without the program name), sys.argv if not set.
    :return: The exit code.
    """
    settings.reset()
    try:
        args = build_parser().parse_args(list(sys.argv[1:] if argv is None else argv))
        overrides = {f.name: getattr(args, f.name) for f in fields(Settings) if getattr(args, f.name) is not None}
        if args.verbose:
            overrides['logger_console_level'] = 'DEBUG'
        settings.update(**overrides)
        preparation()
        with SectionTimer(f'command {args.command}', 'debug'):
            return COMMAND_HANDLERS[args.command](args)
    except UsageError as err:
        logger.error(f'Invalid command line: {err}')
        return 1
    except (ValueError, AssertionError, FileNotFoundError) as err:
        logger.error(f'Validation error: {err}')
        return 1
    except SystemExit as err:
        # --help
        return err.code if isinstance(err.code, int) else 0
    except KeyboardInterrupt:
        logger.error('Run interrupted by the user.', exc_info=True)
        return 2
    except Exception:
        logger.critical('Run interrupted by an unexpected error.', exc_info=True)
        return 2
    finally:
        clean_up()


def preparation() -> None:
    """
    Prepare the environment before all operations.
    """
    logger.set_console_level(settings.logger_console_level)
    logger.set_formatter(settings.console_color)

    # Create the output directory to save results
    init_out_directory()
    if settings.run_name:
        logger.info(f'Run name: {settings.run_name}')

    fix_seed()
    configure_threads()

    # Print settings
    logger.info(settings)


def clean_up() -> None:
    """
    Clean up the environment after all operations. After that a new run can start again.
    """
    save_timers()
    Timer.timers.clear()
    if settings.run_name and settings.logger_file_enable:
        logger.disable_log_file()


# ======================================================================================================================
# =================================================== Helpers ==========================================================
# ======================================================================================================================

def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f'--{n.replace("_", "-")}' for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f'"{args.command}" requires {", ".join(missing)}')


def _write_json(content: Any, file_path: str) -> None:
    with atomic_write(file_path) as f:
        json.dump(yaml_preprocess(content), f, indent=2)
        f.write('\n')
    logger.info(f'Output written in {file_path}')


def _load_model(args: argparse.Namespace) -> ICTH:
    """ The checkpoint backbone if set, else a new one initialized with the seed. """
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        return model
    torch.manual_seed(settings.seed)
    return ICTH(ICTHConfig.from_settings())


def _all_cascades(groups: Sequence[CascadeGroup]) -> List:
    return [c for g in groups for c in g.cascades]


# ======================================================================================================================
# ================================================== Subcommands =======================================================
# ======================================================================================================================

def _simulate(args: argparse.Namespace) -> int:
    _require(args, 'out')
    model = ParametricModel.from_settings()
    seeds = np.random.SeedSequence(settings.seed).generate_state(settings.sim_nb_cascades)
    name = f'{model.family.value}-{model.kernel.kind.value}'
    cascades = [simulate(model, settings.sim_horizon, int(seed), settings.sim_max_events or None,
                         cascade_id=f'{name}-{i:05d}')
                for i, seed in enumerate(seeds)]
    logger.info(f'{len(cascades)} cascades simulated ({sum(c.nb_events for c in cascades)} events)')
    write_groups([CascadeGroup(name, tuple(cascades), label=model.family.value)], args.out)
    return 0


def _reconstruct(args: argparse.Namespace) -> int:
    _require(args, 'input', 'out')
    groups = reconstruct_groups(read_raw_cascades(args.input))
    write_groups(groups, args.out)
    return 0


def _downsample(args: argparse.Namespace) -> int:
    _require(args, 'input', 'out', 'p_missing')
    groups = downsample_groups(read_groups(args.input), args.p_missing, settings.seed)
    write_groups(groups, args.out)
    return 0


def _fit(args: argparse.Namespace) -> int:
    _require(args, 'input', 'out')
    init = ParametricModel.from_settings()
    cascades = _all_cascades(read_groups(args.input))
    if init.family == Family.MBP:
        cascades = [events_to_intervals(c) for c in cascades]
    else:
        nb_intervals = sum(c.nb_intervals for c in cascades)
        if nb_intervals > 0:
            logger.warning(f'{nb_intervals} censored interval(s) ignored by the {init.family.value} fit')
        cascades = [c for c in map(drop_missing_counts, cascades) if c.nb_events > 0]

    result = fit(cascades, init.family, init, FitConfig.from_settings())
    if not result.converged:
        logger.warning(f'The fit did not converge: {result.message}')
    with atomic_write(args.out) as f:
        f.write(result.model.to_json(result.log_likelihood) + '\n')
    logger.info(f'Fitted model written in {args.out}')
    return 0


def _pretrain(args: argparse.Namespace) -> int:
    _require(args, 'input', 'out')
    model = _load_model(args)
    result = pretrain(model, read_groups(args.input), ContrastiveConfig.from_settings())
    logger.info(f'Contrastive loss {result.initial_loss:.5f} -> {result.best_loss:.5f} (epoch {result.best_epoch})')
    save_checkpoint(model, args.out, heads={'projection': result.projection_head})
    return 0


def _finetune_classify(args: argparse.Namespace) -> int:
    _require(args, 'input', 'out')
    _, report = finetune_classify(_load_model(args), read_groups(args.input),
                                  HeadConfig.from_settings(HeadTask.CLASSIFY))
    _write_json(report, args.out)
    return 0


def _finetune_popularity(args: argparse.Namespace) -> int:
    _require(args, 'input', 'out')
    _, report = finetune_popularity(_load_model(args), _all_cascades(read_groups(args.input)),
                                    HeadConfig.from_settings(HeadTask.POPULARITY))
    _write_json({'summary': report.summary(), **yaml_preprocess(report)}, args.out)
    return 0


def _benchmark(args: argparse.Namespace) -> int:
    _require(args, 'out')
    if args.embeddings_dir:
        Path(args.embeddings_dir).mkdir(parents=True, exist_ok=True)
    bench_config = SyntheticBenchConfig.from_settings()
    contrastive_config = ContrastiveConfig.from_settings()
    model_config = ICTHConfig.from_settings()

    # Same corpus for both studies
    groups = generate_synthetic_groups(bench_config)
    reports = run_downsampling_benchmark(bench_config, contrastive_config, model_config, out_dir=args.embeddings_dir,
                                         groups=groups, knn_k=settings.knn_k)
    report = benchmark_report(reports, settings.include_runtime)

    if settings.bench_label_fractions:
        table = run_label_fraction_study(groups, contrastive_config=contrastive_config, model_config=model_config)
        report['label_fraction_study'] = table.to_dict(orient='records')

    _write_json(report, args.out)
    return 0


def _embed(args: argparse.Namespace) -> int:
    _require(args, 'input', 'checkpoint', 'out')
    model = _load_model(args)
    groups = read_groups(args.input)
    with torch.no_grad():
        embeddings = model.group_embeddings([g.cascades for g in groups]).cpu().numpy()
    export_embeddings(embeddings, [g.group_id for g in groups], [g.label for g in groups], args.out)
    return 0


def _cluster(args: argparse.Namespace) -> int:
    _require(args, 'input', 'checkpoint', 'out')
    model = _load_model(args)
    groups = read_groups(args.input)
    _write_json(cluster_groups(model, groups, settings.nb_clusters, settings.seed), args.out)
    return 0


def _gradcheck(args: argparse.Namespace) -> int:
    losses = list(GRAD_CHECK_LOSSES) if args.loss == 'all' else [args.loss]
    reports = []
    for loss in losses:
        model = None
        if not args.tiny:
            torch.manual_seed(settings.seed)
            model = ICTH(ICTHConfig.from_settings(), torch.float64)
        reports.append(grad_check(model, loss=loss, seed=settings.seed))

    max_error = max(r.max_relative_error for r in reports)
    print(f'max relative error: {max_error:.3e}')
    if args.out:
        _write_json({'max_relative_error': max_error,
                     'losses': {r.loss_name: {'max_relative_error': r.max_relative_error,
                                              'worst_tensor': r.worst_tensor, 'errors': r.errors}
                                for r in reports}}, args.out)
    return 0 if max_error < TOLERANCE else 2


COMMAND_HANDLERS: Dict[str, Callable[[argparse.Namespace], int]] = {
    'simulate': _simulate,
    'reconstruct': _reconstruct,
    'downsample': _downsample,
    'fit': _fit,
    'pretrain': _pretrain,
    'finetune-classify': _finetune_classify,
    'finetune-popularity': _finetune_popularity,
    'benchmark': _benchmark,
    'embed': _embed,
    'cluster': _cluster,
    'gradcheck': _gradcheck,
}
