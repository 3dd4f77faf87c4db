"""
Fine-tuning of the task heads on top of the IC-TH embeddings: category classification of cascade groups and final
popularity prediction of truncated cascades.
"""
from copy import deepcopy
from dataclasses import dataclass, replace
from enum import Enum, unique
from math import ceil
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.model_selection import train_test_split

from classes.data_structures import ClassificationReport, PopularityReport
from classes.head_nn import HeadNN
from datasets.cascade import Cascade, CascadeGroup, total_count
from datasets.reconstruction import drop_missing_counts, truncate
from models.heads import ClassifierHead, PopularityHead
from models.icth import ICTH
from models.kernels import Kernel, KernelKind
from models.mbp import expected_future_count
from models.parametric import Family, ParametricModel
from models.parametric_fit import FitConfig, fit
from utils.logger import logger
from utils.metrics import ape, classification_metrics, confusion_matrix, macro_f1, network_metrics
from utils.output import metrics_file, save_results
from utils.settings import settings
from utils.timer import SectionTimer


@unique
class HeadTask(Enum):
    CLASSIFY = 'classify'
    POPULARITY = 'popularity'


@dataclass(frozen=True)
class HeadConfig:
    task: HeadTask = HeadTask.CLASSIFY
    epochs: int = 200
    learning_rate: float = 1e-2
    test_ratio: float = 0.5
    validation_ratio: float = 0.05
    train_fraction: float = 1.0
    unfreeze: bool = False
    early_stopping: bool = True
    # Popularity: 0 means observation_fraction of each horizon, the final time 0 means the horizon
    observation_time: float = 0.0
    observation_fraction: float = 0.1
    final_time: float = 0.0
    parametric_baseline: bool = False
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, 'task', HeadTask(self.task))
        if self.epochs < 1 or not self.learning_rate > 0:
            raise ValueError('At least one epoch and a positive learning rate are required')
        if not 0 < self.test_ratio < 1 or not 0 <= self.validation_ratio < 1:
            raise ValueError('The test ratio should be in ]0, 1[ and the validation ratio in [0, 1[')
        if not 0 < self.train_fraction <= 1:
            raise ValueError(f'The train fraction should be in ]0, 1] (got {self.train_fraction})')
        if self.observation_time < 0 or not 0 < self.observation_fraction < 1 or self.final_time < 0:
            raise ValueError('Invalid observation window')
        if self.final_time > 0 and self.observation_time >= self.final_time:
            raise ValueError(f'The observation time ({self.observation_time}) should be lower than the final time '
                             f'({self.final_time})')

    @classmethod
    def from_settings(cls, task: HeadTask) -> 'HeadConfig':
        return cls(task=task,
                   epochs=settings.finetune_epochs,
                   learning_rate=settings.head_learning_rate,
                   test_ratio=settings.test_ratio,
                   validation_ratio=settings.validation_ratio,
                   train_fraction=settings.train_fraction,
                   unfreeze=settings.unfreeze,
                   early_stopping=settings.early_stopping,
                   observation_time=settings.observation_time,
                   observation_fraction=settings.observation_fraction,
                   final_time=settings.final_time,
                   parametric_baseline=settings.parametric_baseline,
                   seed=settings.seed)

    def window(self, horizon: float) -> Tuple[float, float]:
        """ :return: The observation and final times of a cascade with this horizon. """
        t_obs = self.observation_time or self.observation_fraction * horizon
        return t_obs, self.final_time or horizon


class HeadTraining(NamedTuple):
    """ Early-stopping trace of a head training. """
    best_epoch: int
    best_score: float
    losses: List[float]


# ======================================================================================================================
# ==================================================== Splits ==========================================================
# ======================================================================================================================

def _split(indices: np.ndarray, labels: Optional[np.ndarray], kept_size: int, seed: int) \
        -> Tuple[np.ndarray, np.ndarray]:
    """
    Seeded split of indices in (kept, rest), stratified by labels when every class can appear on both sides.
    """
    if kept_size >= len(indices):
        return indices, indices[:0]
    stratify = None
    if labels is not None:
        nb_classes = len(np.unique(labels[indices]))
        if min(kept_size, len(indices) - kept_size) >= nb_classes \
                and np.min(np.unique(labels[indices], return_counts=True)[1]) >= 2:
            stratify = labels[indices]
    kept, rest = train_test_split(indices, train_size=kept_size, random_state=seed, stratify=stratify)
    return np.sort(kept), np.sort(rest)


def split_indices(nb_items: int, config: HeadConfig, labels: Optional[np.ndarray] = None) \
        -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Split items in train, validation and test sets: test_ratio of the items for testing, validation_ratio of the
    remaining ones for validation, then train_fraction of the rest for training.

    :return: The sorted train, validation and test indices.
    """
    indices = np.arange(nb_items)
    nb_test = ceil(nb_items * config.test_ratio)
    if nb_test >= nb_items:
        raise ValueError(f'Not enough items ({nb_items}) to keep a training set with a test ratio of '
                         f'{config.test_ratio}')
    train, test = _split(indices, labels, nb_items - nb_test, config.seed)

    validation = train[:0]
    nb_validation = ceil(len(train) * config.validation_ratio)
    if 0 < nb_validation < len(train):
        train, validation = _split(train, labels, len(train) - nb_validation, config.seed)

    if config.train_fraction < 1:
        train, _ = _split(train, labels, max(1, round(len(train) * config.train_fraction)), config.seed)

    return train, validation, test


# ======================================================================================================================
# ================================================= Head training ======================================================
# ======================================================================================================================

def _train_head(head: HeadNN, train_inputs: Callable[[], torch.Tensor], train_targets: torch.Tensor,
                score: Callable[[], float], config: HeadConfig, backbone: Optional[ICTH] = None) -> HeadTraining:
    """
    Full-batch training of a head with early stopping on a validation score (higher is better).

    :param head: The head, trained in place.
    :param train_inputs: Returns the training embeddings (recomputed at each epoch when the backbone is trained).
    :param train_targets: The training targets.
    :param score: Returns the current validation score.
    :param config: The fine-tuning configuration.
    :param backbone: The backbone to update with the head (unfrozen mode), None to keep it frozen.
    """
    head.configure_optimizer(config.learning_rate, backbone.parameters() if backbone is not None else ())
    network_metrics(head)
    modules = [head] if backbone is None else [head, backbone]

    with torch.no_grad():
        best_epoch, best_score = 0, score()
    best_state = [deepcopy(m.state_dict()) for m in modules]
    losses = []

    for epoch in range(1, config.epochs + 1):
        head.train()
        losses.append(head.training_step(train_inputs(), train_targets))
        head.eval()
        with torch.no_grad():
            current = score()
        if current > best_score:
            best_epoch, best_score = epoch, current
            best_state = [deepcopy(m.state_dict()) for m in modules]
        logger.log_metrics(metrics_file(), epoch=epoch, loss=losses[-1], val_metric=current)

    if config.early_stopping and best_epoch != config.epochs:
        logger.debug(f'Early stopping: restoring epoch {best_epoch}/{config.epochs} (score {best_score:.4f})')
        for module, state in zip(modules, best_state):
            module.load_state_dict(state)
    head.eval()
    return HeadTraining(best_epoch, best_score, losses)


def train_classifier_head(embeddings: torch.Tensor, labels: Sequence[int], nb_classes: int, config: HeadConfig,
                          validation_embeddings: Optional[torch.Tensor] = None,
                          validation_labels: Optional[Sequence[int]] = None) -> Tuple[ClassifierHead, HeadTraining]:
    """
    Train a softmax classifier on precomputed (frozen) embeddings. Without validation set, the early stopping
    monitors the training macro-F1.

    :return: The trained head and its training trace.
    """
    torch.manual_seed(config.seed)
    head = ClassifierHead(embeddings.shape[1], nb_classes).to(embeddings.dtype)
    targets = torch.as_tensor(labels, dtype=torch.long)
    if validation_embeddings is None or len(validation_embeddings) == 0:
        validation_embeddings, validation_labels = embeddings, targets

    def score() -> float:
        return macro_f1(validation_labels, head.predict(validation_embeddings), nb_classes)

    return head, _train_head(head, lambda: embeddings, targets, score, config)


# ======================================================================================================================
# ================================================ Classification ======================================================
# ======================================================================================================================

def finetune_classify(model: ICTH, groups: Sequence[CascadeGroup], config: Optional[HeadConfig] = None) \
        -> Tuple[ClassifierHead, ClassificationReport]:
    """
    Classify groups from their embedding. The split is stratified, the head is trained on the training split with
    early stopping on the validation macro-F1 and evaluated on the test split.

    :param model: The backbone (only trained if config.unfreeze).
    :param groups: Labeled groups with at least 2 classes.
    :param config: The fine-tuning configuration, from the settings if not set.
    :return: The trained head and the test report.
    """
    config = config or HeadConfig.from_settings(HeadTask.CLASSIFY)
    if any(g.label is None for g in groups):
        raise ValueError('Every group should be labeled to fine-tune a classifier')
    class_names = tuple(sorted({g.label for g in groups}))
    if len(class_names) < 2:
        raise ValueError(f'At least 2 classes are required (got {len(class_names)})')
    labels = np.array([class_names.index(g.label) for g in groups])

    train, validation, test = split_indices(len(groups), config, labels)
    missing = set(range(len(class_names))) - set(labels[train].tolist())
    if missing:
        raise ValueError(f'Class(es) absent from the training split: {", ".join(class_names[i] for i in missing)}')

    def embed(indices: np.ndarray) -> torch.Tensor:
        return model.group_embeddings([groups[i].cascades for i in indices])

    logger.info(f'Fine-tuning a classifier on {len(train)} groups ({len(validation)} validation, {len(test)} test, '
                f'{len(class_names)} classes, {"unfrozen" if config.unfreeze else "frozen"} backbone)')

    with SectionTimer('classifier fine-tuning', 'debug'):
        if config.unfreeze:
            torch.manual_seed(config.seed)
            head = ClassifierHead(model.config.d_model, len(class_names)).to(model.dtype)
            train_targets = torch.as_tensor(labels[train])
            selection = validation if len(validation) > 0 else train

            def score() -> float:
                return macro_f1(labels[selection], head.predict(embed(selection)), len(class_names))

            model.train()
            training = _train_head(head, lambda: embed(train), train_targets, score, config, backbone=model)
            model.eval()
        else:
            with torch.no_grad():
                embeddings = embed(np.arange(len(groups)))
            head, training = train_classifier_head(embeddings[train], labels[train], len(class_names), config,
                                                   embeddings[validation], labels[validation])

    with torch.no_grad():
        train_predictions = head.predict(embed(train))
        test_predictions = head.predict(embed(test))
    matrix = confusion_matrix(labels[test], test_predictions, len(class_names))
    report = ClassificationReport(class_names=class_names,
                                  test_metrics=classification_metrics(matrix),
                                  confusion_matrix=matrix,
                                  best_validation_f1=training.best_score,
                                  best_epoch=training.best_epoch,
                                  train_f1=macro_f1(labels[train], train_predictions, len(class_names)),
                                  nb_train=len(train), nb_validation=len(validation), nb_test=len(test))

    logger.info(f'Test macro-F1: {report.test_metrics.f1:.4f} (train {report.train_f1:.4f}, '
                f'best validation {training.best_score:.4f} at epoch {training.best_epoch})')
    save_results(classification_test_f1=report.test_metrics.f1, classification_train_f1=report.train_f1)
    return head, report


# ======================================================================================================================
# ================================================== Popularity ========================================================
# ======================================================================================================================

class PopularitySample(NamedTuple):
    """ A cascade cut at its observation time with the counts to predict. """
    cascade_id: str
    observed: Cascade
    observed_count: int
    final_count: int
    t_obs: float
    t_final: float

    @property
    def future_count(self) -> int:
        return self.final_count - self.observed_count


def popularity_samples(cascades: Sequence[Cascade], config: HeadConfig) -> Tuple[List[PopularitySample], int]:
    """
    Cut the cascades at their observation time. Cascades with a final count of 0 (undefined error) or nothing
    observed before the observation time are excluded.

    :return: The samples and the number of excluded cascades.
    """
    samples = []
    excluded = []
    for cascade in cascades:
        t_obs, t_final = config.window(cascade.horizon)
        if t_obs >= t_final:
            raise ValueError(f'The observation time {t_obs:g} should be lower than the final time {t_final:g}')
        final_count = total_count(truncate(cascade, t_final))
        observed = truncate(cascade, t_obs)
        if final_count == 0 or len(observed) == 0:
            excluded.append(cascade.id)
            continue
        samples.append(PopularitySample(cascade.id, observed, total_count(observed), final_count, t_obs, t_final))

    if excluded:
        logger.warning(f'{len(excluded)} cascade(s) excluded from the popularity prediction (final count 0 or '
                       f'nothing observed before the observation time)')
    return samples, len(excluded)


def finetune_popularity(model: ICTH, cascades: Sequence[Cascade], config: Optional[HeadConfig] = None) \
        -> Tuple[PopularityHead, PopularityReport]:
    """
    Predict the final popularity of cascades observed up to T_obs. The head regresses log(1 + future count) from the
    embedding of the truncated cascade, the prediction is the observed count plus the predicted future count.

    :param model: The backbone (only trained if config.unfreeze).
    :param cascades: The cascades, observed up to their final time.
    :param config: The fine-tuning configuration, from the settings if not set.
    :return: The trained head and the absolute percentage errors on the test cascades, with baselines.
    """
    config = config or HeadConfig.from_settings(HeadTask.POPULARITY)
    samples, nb_excluded = popularity_samples(cascades, config)
    if len(samples) < 2:
        raise ValueError(f'At least 2 cascades with a positive final count are required (got {len(samples)})')

    train, validation, test = split_indices(len(samples), config)
    future = torch.tensor([s.future_count for s in samples], dtype=model.dtype)
    targets = torch.log1p(future)

    def embed(indices: np.ndarray) -> torch.Tensor:
        return model.cascade_embeddings([samples[i].observed for i in indices])

    logger.info(f'Fine-tuning a popularity head on {len(train)} cascades ({len(validation)} validation, '
                f'{len(test)} test, {nb_excluded} excluded)')

    torch.manual_seed(config.seed)
    head = PopularityHead(model.config.d_model).to(model.dtype)
    selection = validation if len(validation) > 0 else train
    with SectionTimer('popularity fine-tuning', 'debug'):
        if config.unfreeze:
            def score() -> float:
                return -float(head.loss(embed(selection), targets[selection]))

            model.train()
            training = _train_head(head, lambda: embed(train), targets[train], score, config, backbone=model)
            model.eval()
        else:
            with torch.no_grad():
                embeddings = embed(np.arange(len(samples)))

            def score() -> float:
                return -float(head.loss(embeddings[selection], targets[selection]))

            training = _train_head(head, lambda: embeddings[train], targets[train], score, config)

    observed = np.array([s.observed_count for s in samples], dtype=float)
    final = np.array([s.final_count for s in samples], dtype=float)
    with torch.no_grad():
        predicted_future = head.predict(embed(test)).cpu().numpy()
    apes = ape(observed[test] + predicted_future, final[test])

    # Constant predictor: the median final count of the training cascades (never below the observed count)
    median_final = float(np.median(final[train]))
    baseline_apes = ape(np.maximum(observed[test], median_final), final[test])

    parametric_apes = None
    if config.parametric_baseline:
        parametric_apes = _parametric_baseline_apes([samples[i] for i in train], [samples[i] for i in test],
                                                    config.seed)

    report = PopularityReport(cascade_ids=tuple(samples[i].cascade_id for i in test), apes=apes,
                              baseline_apes=baseline_apes, parametric_apes=parametric_apes,
                              nb_excluded=nb_excluded)
    logger.info(f'Popularity APE: mean {report.mean_ape:.4f}, median {report.median_ape:.4f} '
                f'(median baseline: mean {np.mean(baseline_apes):.4f}), best epoch {training.best_epoch}')
    save_results(**report.summary())
    return head, report


def _parametric_baseline_apes(train: Sequence[PopularitySample], test: Sequence[PopularitySample],
                              seed: int) -> np.ndarray:
    """
    Fit an exponential Hawkes model (immigrant mode) on the observed events of the training cascades, then predict
    each test cascade as its observed count plus the expected number of events after its observation time.
    """
    fit_cascades = [drop_missing_counts(s.observed) for s in train]
    fit_cascades = [c for c in fit_cascades if c.nb_events > 0]
    if len(fit_cascades) == 0:
        raise ValueError('No observed event in the training cascades to fit the parametric baseline')

    init = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0), mu=0.0)
    result = fit(fit_cascades, Family.HAWKES, init, replace(FitConfig.from_settings(), seed=seed))
    logger.info(f'Parametric popularity baseline: {result.model.to_json(result.log_likelihood)}')

    predicted = [s.observed_count + expected_future_count(result.model, s.observed.event_times, s.t_obs, s.t_final)
                 for s in test]
    return ape(predicted, [s.final_count for s in test])
