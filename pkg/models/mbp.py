"""
Mean Behavior Poisson process: the deterministic intensity ξ(t) solving the Volterra equation
    ξ(t) = f(t) + ∫_0^t ξ(τ)φ(t - τ)dτ
with f(t) = μ, or f(t) = μ + φ(t) for a cascade started by an immigrant event at t = 0.
The equation is discretized with trapezoidal weights on a uniform grid, giving a lower triangular linear system.
Everything is computed with torch in float64 so the likelihood can be differentiated with respect to the parameters.
"""
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import torch

from classes.exceptions import CascadeError
from datasets.cascade import Cascade, check_canonical
from models.kernels import KernelKind, phi
from models.parametric import Family, ParametricModel
from utils.settings import settings

# Lower bound of the expected count under the log
COMPENSATOR_FLOOR = 1e-12

_GRID_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class MeanIntensityGrid:
    """ ξ sampled at start + k * step, k = 0..n, and its exact piecewise-linear integral from the grid start. """
    start: float
    step: float
    values: torch.Tensor
    cumulative: torch.Tensor

    @classmethod
    def from_values(cls, values: torch.Tensor, step: float, start: float = 0.0) -> 'MeanIntensityGrid':
        cells = (values[1:] + values[:-1]) * (step / 2)
        cumulative = torch.cat([values.new_zeros(1), torch.cumsum(cells, dim=0)])
        return cls(start, step, values, cumulative)

    @property
    def nb_steps(self) -> int:
        return len(self.values) - 1

    @property
    def end(self) -> float:
        return self.start + self.nb_steps * self.step

    @property
    def times(self) -> torch.Tensor:
        return self.start + self.step * torch.arange(self.nb_steps + 1, dtype=self.values.dtype)

    def antiderivative(self, x: Union[float, torch.Tensor]) -> torch.Tensor:
        """ ∫_start^x of the linear interpolation of ξ. """
        x = torch.as_tensor(x, dtype=self.values.dtype) - self.start
        cell = torch.clamp(torch.floor(x / self.step).long(), 0, self.nb_steps - 1)
        dx = x - cell * self.step
        left, right = self.values[cell], self.values[cell + 1]
        return self.cumulative[cell] + dx * (left + 0.5 * (right - left) / self.step * dx)

    def compensator(self, a: Union[float, torch.Tensor], b: Union[float, torch.Tensor]) -> torch.Tensor:
        """ Ξ(a, b), the expected number of events over [a, b]. """
        a_t, b_t = torch.as_tensor(a, dtype=torch.float64), torch.as_tensor(b, dtype=torch.float64)
        if bool((a_t > b_t).any()):
            raise ValueError(f'Invalid interval [{a}, {b}]')
        if bool((a_t < self.start - _GRID_TOLERANCE).any()) or bool((b_t > self.end + _GRID_TOLERANCE).any()):
            raise ValueError(f'Interval [{a}, {b}] outside of the grid [{self.start:g}, {self.end:g}]')
        return self.antiderivative(b) - self.antiderivative(a)


def solve_volterra(forcing: torch.Tensor, kernel_values: torch.Tensor, step: float) -> torch.Tensor:
    """
    Solve ξ_k = f_k + Σ_j w_kj φ_{k-j} ξ_j with trapezoidal weights (h/2 at both ends of each row, h inside).

    :param forcing: f on the grid (n + 1,).
    :param kernel_values: φ(k * step) for k = 0..n.
    :param step: The grid step h.
    :return: ξ on the grid (n + 1,).
    """
    size = len(forcing)
    index = torch.arange(size)
    lag = index.unsqueeze(1) - index.unsqueeze(0)
    lower = lag >= 0

    weights = torch.where(lower, torch.full((size, size), step, dtype=forcing.dtype),
                          torch.zeros(size, size, dtype=forcing.dtype))
    weights[:, 0] = step / 2
    weights.diagonal().fill_(step / 2)
    weights[0] = 0

    system = torch.eye(size, dtype=forcing.dtype) - weights * kernel_values[lag.clamp(min=0)]
    return torch.linalg.solve_triangular(system, forcing.unsqueeze(1), upper=False).squeeze(1)


def mean_intensity_grid(kind: KernelKind, params: Dict[str, Union[float, torch.Tensor]], horizon: float,
                        nb_steps: int, immigrant: bool) -> MeanIntensityGrid:
    """
    Differentiable ξ grid over [0, horizon] with nb_steps steps.
    """
    step = horizon / nb_steps
    grid_times = step * torch.arange(nb_steps + 1, dtype=torch.float64)
    mu = torch.as_tensor(params.get('mu', 0.0), dtype=torch.float64)
    kappa, theta = params['kappa'], params['theta']
    c = params.get('c', 1.0)

    kernel_values = phi(kind, kappa, theta, c, grid_times)
    kernel_values = torch.as_tensor(kernel_values, dtype=torch.float64)
    forcing = mu + kernel_values if immigrant else mu.expand(nb_steps + 1)
    return MeanIntensityGrid.from_values(solve_volterra(forcing, kernel_values, step), step)


def _check_mbp(model: ParametricModel) -> None:
    if model.family != Family.MBP:
        raise ValueError(f'Expected a MBP model (got {model.family.value})')


def mbp_xi(model: ParametricModel, horizon: float, grid_step: Optional[float] = None,
           immigrant: Optional[bool] = None) -> MeanIntensityGrid:
    """
    Solve the mean intensity of a MBP model on a uniform grid covering [0, horizon].

    :param model: The MBP model.
    :param horizon: End of the grid.
    :param grid_step: The grid step, horizon / volterra_grid_size if not set.
    :param immigrant: If True the forcing includes the immigrant event at t = 0. Default: True iff mu == 0.
    :return: The sampled ξ, ξ(0) = μ (plus φ(0) in immigrant mode).
    """
    _check_mbp(model)
    if not horizon > 0:
        raise ValueError(f'The horizon should be > 0 (got {horizon})')
    grid_step = horizon / settings.volterra_grid_size if grid_step is None else grid_step
    if not grid_step > 0:
        raise ValueError(f'The grid step should be > 0 (got {grid_step})')

    nb_steps = max(1, math.ceil(horizon / grid_step - _GRID_TOLERANCE))
    immigrant = model.immigrant_mode if immigrant is None else immigrant
    with torch.no_grad():
        return mean_intensity_grid(model.kernel.kind, model.params(), nb_steps * grid_step, nb_steps, immigrant)


def mbp_compensator(model: ParametricModel, a: float, b: float, grid: Optional[MeanIntensityGrid] = None) -> float:
    """
    :param model: The MBP model.
    :param a: Start of the interval.
    :param b: End of the interval.
    :param grid: A solved grid covering [a, b], solved over [0, b] if not set.
    :return: Ξ(a, b) = ∫_a^b ξ(t)dt.
    """
    if grid is None:
        if not 0 <= a <= b:
            raise ValueError(f'Invalid interval [{a}, {b}]')
        if b == 0:
            return 0.0
        grid = mbp_xi(model, b)
    return float(grid.compensator(a, b))


def interval_arrays(cascades: Sequence[Cascade], immigrant: bool = False) -> Dict[str, torch.Tensor]:
    """
    Flatten the censored intervals of the cascades (starts, ends, counts).
    With immigrant=True the immigrant event is removed from the count of an interval starting at t = 0, it is
    already part of the forcing term.
    """
    starts, ends, counts = [], [], []
    for cascade in cascades:
        if any(r.is_event for r in cascade.records):
            raise CascadeError(f'Cascade "{cascade.id}" has point events, the MBP likelihood needs interval counts '
                               f'only (see datasets.reconstruction.events_to_intervals)')
        check_canonical(cascade)
        for i, record in enumerate(cascade.records):
            starts.append(record.time)
            ends.append(record.end)
            counts.append(record.count - 1 if immigrant and i == 0 and record.time == 0 and record.count > 0
                          else record.count)
    return {'starts': torch.tensor(starts, dtype=torch.float64),
            'ends': torch.tensor(ends, dtype=torch.float64),
            'counts': torch.tensor(counts, dtype=torch.float64)}


def interval_loglik_tensor(grid: MeanIntensityGrid, intervals: Dict[str, torch.Tensor]) -> torch.Tensor:
    """ Σ c_i log Ξ_i - Σ Ξ_i over flattened intervals, differentiable through the grid. """
    if len(intervals['starts']) == 0:
        return grid.values.new_zeros(())
    expected = grid.compensator(intervals['starts'], intervals['ends'])
    counts = intervals['counts']
    log_terms = torch.where(counts > 0, counts * torch.log(expected.clamp(min=COMPENSATOR_FLOOR)),
                            torch.zeros_like(expected))
    return log_terms.sum() - expected.sum()


def mbp_ic_loglik(model: ParametricModel, cascade: Cascade, grid: Optional[MeanIntensityGrid] = None) -> float:
    """
    Interval-censored log-likelihood Σ c_i log Ξ(o_i, o_i + d_i) - Σ Ξ(o_i, o_i + d_i).

    :param model: The MBP model.
    :param cascade: A cascade of censored intervals only.
    :param grid: A solved grid covering the cascade, solved over [0, horizon] if not set.
    :return: The log-likelihood.
    """
    _check_mbp(model)
    intervals = interval_arrays([cascade], model.immigrant_mode)
    grid = mbp_xi(model, cascade.horizon) if grid is None else grid
    with torch.no_grad():
        return float(interval_loglik_tensor(grid, intervals))


def expected_future_count(model: ParametricModel, history: Sequence[float], t_obs: float, t_final: float,
                          grid_size: Optional[int] = None) -> float:
    """
    Expected number of events in (t_obs, t_final] given the events observed up to t_obs.
    For Hawkes, the mean intensity after t_obs solves the Volterra equation whose forcing term is the background
    plus the excitation left by the observed events. For MBP the history is not used.

    :param model: A Hawkes or MBP model.
    :param history: The observed event times.
    :param t_obs: The observation time.
    :param t_final: The prediction time.
    :param grid_size: The number of grid steps over (t_obs, t_final], volterra_grid_size if not set.
    :return: The expected count of future events.
    """
    if not t_final > t_obs >= 0:
        raise ValueError(f'Expected 0 <= t_obs < t_final (got {t_obs}, {t_final})')
    nb_steps = grid_size or settings.volterra_grid_size

    if model.family == Family.MBP:
        return mbp_compensator(model, t_obs, t_final, mbp_xi(model, t_final, t_final / nb_steps))
    if model.family != Family.HAWKES:
        raise ValueError(f'No expected future count for the family "{model.family.value}"')

    kernel = model.kernel
    step = (t_final - t_obs) / nb_steps
    offsets = step * torch.arange(nb_steps + 1, dtype=torch.float64)
    observed = torch.tensor([t for t in history if t <= t_obs], dtype=torch.float64)
    with torch.no_grad():
        kernel_values = phi(kernel.kind, kernel.kappa, kernel.theta, kernel.c, offsets)
        elapsed = t_obs - observed
        forcing = model.mu + phi(kernel.kind, kernel.kappa, kernel.theta, kernel.c,
                                 offsets.unsqueeze(1) + elapsed.unsqueeze(0)).sum(dim=1)
        grid = MeanIntensityGrid.from_values(solve_volterra(forcing, kernel_values, step), step, t_obs)
        return float(grid.cumulative[-1])
