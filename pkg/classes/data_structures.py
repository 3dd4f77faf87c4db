"""
Bunch of dataclasses and enumerations to structure information and simplify code.
"""
from dataclasses import dataclass, field
from enum import Enum, unique
from typing import Dict, List, Optional, Tuple

import numpy as np


@unique
class RecordKind(Enum):
    """ Kind of cascade record: an observed event time or a count of events censored over an interval. """
    POINT_EVENT = 'event'
    CENSORED_INTERVAL = 'interval'


@unique
class ViolationKind(Enum):
    """ Invariant broken by a cascade (see datasets.cascade.validate). """
    UNSORTED = 'unsorted'
    OVERLAP = 'overlap'
    UNTILED_GAP = 'untiled_gap'
    HORIZON = 'horizon'


@dataclass(frozen=True)
class Violation:
    """ One invariant violation, located by the index of the offending record. """
    kind: ViolationKind
    index: int
    message: str

    def __str__(self):
        return f'{self.kind.value} (record {self.index}): {self.message}'


@dataclass(frozen=True)
class ReconstructionWarning:
    """ A gap where the cumulative counts decrease or stall, its missing count is clamped to 0. """
    gap_index: int
    previous_count: int
    next_count: int
    clamped: int

    def __str__(self):
        return f'gap {self.gap_index}: cumulative count {self.previous_count} -> {self.next_count}, ' \
               f'{self.clamped} event(s) clamped'


@dataclass(frozen=True)
class ClassMetrics:
    """ Store classification result metrics for one class. """
    nb: int
    precision: float
    recall: float
    f1: float

    def __str__(self):
        return f'f1: {self.f1:.2%}'

    def __repr__(self):
        return f'nb: {self.nb} | precision: {self.precision:.2%} | recall: {self.recall:.2%} | f1: {self.f1:.2%}'


@dataclass(frozen=True)
class ClassificationMetrics(ClassMetrics):
    """ Store classification result metrics, the overall precision, recall and f1 are macro averages. """
    accuracy: float
    classes: List[ClassMetrics]

    def __iter__(self):
        return iter(self.classes)

    def __getitem__(self, i):
        return self.classes[i]

    def __repr__(self):
        return f'nb: {self.nb} | accuracy: {self.accuracy:.2%} | precision: {self.precision:.2%} |' \
               f' recall: {self.recall:.2%} | macro-f1: {self.f1:.2%}\n\t- ' + \
            '\n\t- '.join([cls.__repr__() for cls in self])


@dataclass(frozen=True)
class ClassificationReport:
    """ Outcome of a category fine-tuning: test metrics, confusion matrix and the early-stopping trace. """
    class_names: Tuple[str, ...]
    test_metrics: ClassificationMetrics
    confusion_matrix: np.ndarray
    best_validation_f1: float
    best_epoch: int
    train_f1: float
    nb_train: int
    nb_validation: int
    nb_test: int


@dataclass(frozen=True)
class PopularityReport:
    """ Absolute percentage errors of the final popularity predictions on the test cascades. """
    cascade_ids: Tuple[str, ...]
    apes: np.ndarray
    baseline_apes: np.ndarray
    parametric_apes: Optional[np.ndarray] = None
    nb_excluded: int = 0

    @property
    def mean_ape(self) -> float:
        return float(np.mean(self.apes))

    @property
    def median_ape(self) -> float:
        return float(np.median(self.apes))

    def summary(self) -> Dict[str, float]:
        summary = {'icth_mean_ape': self.mean_ape, 'icth_median_ape': self.median_ape,
                   'median_baseline_mean_ape': float(np.mean(self.baseline_apes)),
                   'median_baseline_median_ape': float(np.median(self.baseline_apes))}
        if self.parametric_apes is not None:
            summary['hawkes_mean_ape'] = float(np.mean(self.parametric_apes))
            summary['hawkes_median_ape'] = float(np.median(self.parametric_apes))
        return summary


@dataclass(frozen=True)
class MetricReport:
    """ Separability metrics of the group embeddings for one down-sampling probability. """
    p_missing: float
    retrieval_accuracy: float
    knn_accuracy: float
    silhouette: float
    nb_groups: int
    total_events: int
    final_loss: float
    runtime: float = 0.0
    embeddings_file: Optional[str] = None


@dataclass(frozen=True)
class GradCheckReport:
    """ Relative error between the automatic gradient and central finite differences, per weight tensor. """
    loss_name: str
    step: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst_tensor(self) -> Optional[str]:
        return max(self.errors, key=self.errors.get) if self.errors else None


@dataclass(frozen=True)
class KMeansResult:
    """ Lloyd k-means outcome, the inertia is recorded after each assignment step. """
    assignments: np.ndarray
    centroids: np.ndarray
    inertia_history: List[float]
    nb_iterations: int

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


@dataclass(frozen=True)
class JaccardSummary:
    """ Jaccard similarity of tag sets over pairs of groups in the same cluster and in different clusters. """
    matrix: np.ndarray
    intra_mean: float
    intra_std: float
    inter_mean: float
    inter_std: float
    nb_intra: int
    nb_inter: int
    nb_skipped: int
