"""
Synthetic corpus of cascade groups: each group holds the cascades of one self-exciting process with randomly drawn
kernel parameters, one process family per kernel shape.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from classes.exceptions import CascadeError
from datasets.cascade import CascadeGroup, validate
from models.kernels import Kernel, KernelKind
from models.parametric import Family, ParametricModel, simulate
from utils.logger import logger
from utils.settings import settings
from utils.timer import SectionTimer

Range = Tuple[float, float]


@dataclass(frozen=True)
class SyntheticBenchConfig:
    """ Structure of the synthetic corpus and the down-sampling probabilities evaluated on it. """
    groups_per_family: int = 20
    cascades_per_group: int = 50
    horizon: float = 50.0
    p_missing: Tuple[float, ...] = (0.0, 0.5, 0.8, 0.9)
    exp_kappa: Range = (0.3, 0.9)
    exp_theta: Range = (0.5, 5.0)
    # Branching factor range, converted to the kernel magnitude for each draw
    pl_kappa: Range = (0.3, 0.9)
    pl_theta: Range = (0.3, 1.5)
    pl_c: Range = (0.5, 2.0)
    max_events: int = 500
    seed: int = 42

    def __post_init__(self):
        for name in ('p_missing', 'exp_kappa', 'exp_theta', 'pl_kappa', 'pl_theta', 'pl_c'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

        if self.groups_per_family < 1 or self.cascades_per_group < 1:
            raise ValueError('The number of groups per family and cascades per group should be positive')
        if not self.horizon > 0:
            raise ValueError(f'The horizon should be > 0 (got {self.horizon})')
        if len(self.p_missing) == 0 or not all(0 <= p <= 1 for p in self.p_missing):
            raise ValueError(f'The down-sampling probabilities should be in [0, 1] (got {self.p_missing})')
        if self.max_events < 0:
            raise ValueError('The maximum number of events should be 0 (no limit) or more')

        for name in ('exp_kappa', 'exp_theta', 'pl_kappa', 'pl_theta', 'pl_c'):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ValueError(f'Degenerate parameter range "{name}": ({low}, {high})')
        if self.exp_kappa[1] >= 1 or self.pl_kappa[1] >= 1:
            raise ValueError('The branching factor ranges should stay below 1 (subcritical processes)')

    @classmethod
    def from_settings(cls) -> 'SyntheticBenchConfig':
        return cls(groups_per_family=settings.bench_groups_per_family,
                   cascades_per_group=settings.bench_cascades_per_group,
                   horizon=settings.bench_horizon,
                   p_missing=tuple(settings.bench_p_missing),
                   exp_kappa=tuple(settings.bench_exp_kappa),
                   exp_theta=tuple(settings.bench_exp_theta),
                   pl_kappa=tuple(settings.bench_pl_kappa),
                   pl_theta=tuple(settings.bench_pl_theta),
                   pl_c=tuple(settings.bench_pl_c),
                   max_events=settings.bench_max_events,
                   seed=settings.seed)

    def draw_kernel(self, kind: KernelKind, rng: np.random.Generator) -> Kernel:
        """ Draw the kernel parameters of one group uniformly in the configured ranges. """
        if kind == KernelKind.EXPONENTIAL:
            return Kernel(kind, rng.uniform(*self.exp_kappa), rng.uniform(*self.exp_theta))
        mass = rng.uniform(*self.pl_kappa)
        return Kernel.power_law_from_mass(mass, rng.uniform(*self.pl_theta), rng.uniform(*self.pl_c))


def generate_synthetic_groups(config: SyntheticBenchConfig) -> List[CascadeGroup]:
    """
    Simulate the synthetic corpus: for each kernel family, groups_per_family parameter sets, each one simulated
    cascades_per_group times in social-media mode (immigrant event at 0, no background).

    The group label is the kernel family, the group id is "<family>-<parameter set index>".

    :param config: The corpus structure.
    :return: The groups, exponential family first.
    """
    rng = np.random.default_rng(config.seed)
    groups = []

    with SectionTimer('synthetic corpus generation', 'debug'):
        for kind in (KernelKind.EXPONENTIAL, KernelKind.POWER_LAW):
            for group_index in range(config.groups_per_family):
                kernel = config.draw_kernel(kind, rng)
                model = ParametricModel(Family.HAWKES, kernel, mu=0.0)
                group_id = f'{kind.value}-{group_index:03d}'
                seeds = rng.integers(0, 2 ** 32, size=config.cascades_per_group)

                cascades = []
                for cascade_index, seed in enumerate(seeds):
                    cascade = simulate(model, config.horizon, int(seed), max_events=config.max_events or None,
                                       cascade_id=f'{group_id}-{cascade_index:04d}')
                    violations = validate(cascade)
                    if violations:
                        raise CascadeError(f'Invalid simulated cascade "{cascade.id}": {violations[0]}')
                    cascades.append(cascade)

                groups.append(CascadeGroup(group_id, tuple(cascades), label=kind.value))
                logger.debug(f'Group {group_id}: κ={kernel.kappa:.4g}, θ={kernel.theta:.4g}, c={kernel.c:.4g}, '
                             f'branching factor {kernel.branching_factor:.3f}, '
                             f'{sum(c.nb_events for c in cascades)} events')

    logger.info(f'{len(groups)} synthetic groups generated '
                f'({sum(len(g) for g in groups)} cascades, horizon {config.horizon:g})')
    return groups


def family_labels(groups: Sequence[CascadeGroup]) -> Dict[str, int]:
    """ :return: The index of each distinct group label, in sorted label order. """
    return {label: i for i, label in enumerate(sorted({g.label for g in groups if g.label is not None}))}
