"""
Maximum likelihood fitting of the parametric models.
The positive parameters are optimized in log space with L-BFGS-B, the gradient of the summed log-likelihood comes
from torch autograd in float64.
"""
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import minimize

from classes.exceptions import FitError
from datasets.cascade import Cascade
from models.mbp import interval_arrays, interval_loglik_tensor, mean_intensity_grid
from models.parametric import INTENSITY_FLOOR, Family, ParametricModel, event_loglik_tensor, pad_event_times
from utils.logger import logger
from utils.settings import settings


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-6
    max_redraws: int = 10
    grid_size: int = 2048
    seed: int = 42

    @classmethod
    def from_settings(cls) -> 'FitConfig':
        return cls(max_iterations=settings.fit_max_iterations, gradient_tolerance=settings.fit_gradient_tolerance,
                   max_redraws=settings.fit_max_redraws, grid_size=settings.volterra_grid_size, seed=settings.seed)


@dataclass(frozen=True)
class FitResult:
    model: ParametricModel
    log_likelihood: float
    nb_iterations: int
    converged: bool
    message: str = ''

    def to_dict(self):
        return self.model.to_dict(fit_ll=self.log_likelihood)


class _Objective:
    """ Negative summed log-likelihood as a function of the log-parameters, with its gradient. """

    def __init__(self, cascades: Sequence[Cascade], init: ParametricModel, free: List[str], grid_size: int):
        self.init = init
        self.free = free
        self.fixed_params = {n: v for n, v in init.params().items() if n not in free}
        self.grid_size = grid_size

        if init.family == Family.MBP:
            self.intervals = interval_arrays(cascades, init.immigrant_mode)
            self.horizon = max(c.horizon for c in cascades)
        else:
            self.batch = pad_event_times(cascades)

    def loglik(self, log_params: torch.Tensor, floor: Optional[float] = INTENSITY_FLOOR) -> torch.Tensor:
        params: Dict = dict(self.fixed_params)
        params.update({name: torch.exp(log_params[i]) for i, name in enumerate(self.free)})

        if self.init.family == Family.MBP:
            grid = mean_intensity_grid(self.init.kernel.kind, params, self.horizon, self.grid_size,
                                       self.init.immigrant_mode)
            return interval_loglik_tensor(grid, self.intervals)

        return event_loglik_tensor(self.init.family, self.init.kernel.kind, params, self.batch,
                                   self.init.population, condition_on_first=self.init.immigrant_mode,
                                   floor=floor).sum()

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        log_params = torch.tensor(x, dtype=torch.float64, requires_grad=True)
        value = -self.loglik(log_params)
        if not torch.isfinite(value):
            return math.inf, np.zeros_like(x)
        value.backward()
        return float(value), log_params.grad.numpy().copy()

    def value(self, x: np.ndarray, floor: Optional[float] = INTENSITY_FLOOR) -> float:
        with torch.no_grad():
            return float(self.loglik(torch.tensor(x, dtype=torch.float64), floor))


def fit(cascades: Sequence[Cascade], family: Family, init: ParametricModel, config: Optional[FitConfig] = None,
        fixed: Iterable[str] = ()) -> FitResult:
    """
    Fit a parametric model by maximizing the summed log-likelihood of the cascades.
    Hawkes and HawkesN are fitted on point events (conditioned on the first event when mu = 0), MBP on censored
    interval counts. Parameters equal to 0 in the initial model can't move in log space and stay fixed, as do the
    names in `fixed` and the HawkesN population.

    :param cascades: The training cascades.
    :param family: The model family, it should match the initial model.
    :param init: The initial parameters.
    :param config: The optimizer configuration, from the settings if not set.
    :param fixed: Names of parameters kept at their initial value ('mu', 'kappa', 'theta', 'c').
    :return: The fitted model with its final log-likelihood, number of iterations and convergence flag.
    :raise FitError: If the log-likelihood is not finite at the initial point and after every re-draw.
    """
    config = config or FitConfig.from_settings()
    family = Family(family)
    if len(cascades) == 0:
        raise ValueError('At least one cascade is required to fit a model')
    if init.family != family:
        raise ValueError(f'The initial model family ({init.family.value}) should be {family.value}')

    fixed = set(fixed)
    unknown = fixed - set(init.params())
    if unknown:
        raise ValueError(f'Unknown parameter(s) to fix: {", ".join(sorted(unknown))}')
    free = [n for n, v in init.params().items() if n not in fixed and v > 0]
    objective = _Objective(cascades, init, free, config.grid_size)

    x0 = np.log([init.params()[n] for n in free])
    rng = np.random.default_rng(config.seed)
    for redraw in range(config.max_redraws + 1):
        if math.isfinite(objective.value(x0)):
            break
        if redraw == config.max_redraws:
            raise FitError(f'The log-likelihood is not finite at the initial parameters after {redraw} re-draw(s)')
        logger.debug(f'Non-finite log-likelihood at the initial point, re-draw {redraw + 1}')
        x0 = np.log([init.params()[n] for n in free]) + rng.normal(0, 1, size=len(free))

    if len(free) == 0:
        nb_iterations, converged, message, x = 0, True, 'no free parameter', x0
    else:
        result = minimize(objective, x0, jac=True, method='L-BFGS-B',
                          options={'maxiter': config.max_iterations, 'gtol': config.gradient_tolerance})
        nb_iterations, x = int(result.nit), result.x
        converged = float(np.max(np.abs(result.jac))) < config.gradient_tolerance
        message = str(result.message)

    fitted = init.with_params(**{name: float(np.exp(x[i])) for i, name in enumerate(free)})
    log_likelihood = objective.value(x, floor=None)

    logger.info(f'{family.value} fit on {len(cascades)} cascade(s): LL={log_likelihood:.6g} after '
                f'{nb_iterations} iteration(s) ({"converged" if converged else "not converged"}) {fitted.params()}')
    return FitResult(fitted, log_likelihood, nb_iterations, converged, message)
