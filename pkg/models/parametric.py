"""
Parametric self-exciting processes: Hawkes, finite population HawkesN and the Mean Behavior Poisson (MBP) process.
Intensities use the left limit convention, an event never excites itself.
"""
import json
import math
from dataclasses import dataclass, replace
from enum import Enum, unique
from typing import Any, Dict, NamedTuple, Optional, Sequence, Union

import numpy as np
import torch

from datasets.cascade import Cascade
from models.kernels import Kernel, KernelKind, phi, phi_integral
from utils.settings import settings

# Lower bound of the intensity under the log while fitting
INTENSITY_FLOOR = 1e-300


@unique
class Family(Enum):
    HAWKES = 'hawkes'
    HAWKESN = 'hawkesn'
    MBP = 'mbp'


@dataclass(frozen=True)
class ParametricModel:
    """
    A self-exciting process. μ = 0 is the social-media mode: the cascade starts with an immigrant event at t = 0.
    """
    family: Family
    kernel: Kernel
    mu: float = 0.0
    population: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'family', Family(self.family))
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ValueError(f'The background intensity should be finite and >= 0 (got {self.mu})')
        if self.family == Family.HAWKESN:
            if self.population is None or int(self.population) != self.population or self.population < 1:
                raise ValueError(f'HawkesN requires an integer population size >= 1 (got {self.population})')
            if self.mu != 0:
                raise ValueError('HawkesN has no background intensity (mu should be 0)')
            object.__setattr__(self, 'population', int(self.population))

    @classmethod
    def from_settings(cls) -> 'ParametricModel':
        family = Family(settings.model_family)
        return cls(family=family,
                   kernel=Kernel(KernelKind(settings.model_kernel), settings.model_kappa, settings.model_theta,
                                 settings.model_c),
                   mu=0.0 if family == Family.HAWKESN else settings.model_mu,
                   population=settings.model_population if family == Family.HAWKESN else None)

    @property
    def immigrant_mode(self) -> bool:
        return self.mu == 0

    @property
    def branching_factor(self) -> float:
        return self.kernel.branching_factor

    def params(self) -> Dict[str, float]:
        """ :return: The continuous parameters, by name. """
        params = {'mu': self.mu, 'kappa': self.kernel.kappa, 'theta': self.kernel.theta}
        if self.kernel.kind == KernelKind.POWER_LAW:
            params['c'] = self.kernel.c
        return params

    def with_params(self, **params: float) -> 'ParametricModel':
        kernel_params = {name: float(params.pop(name)) for name in ('kappa', 'theta', 'c') if name in params}
        if 'mu' in params:
            params['mu'] = float(params['mu'])
        return replace(self, kernel=replace(self.kernel, **kernel_params), **params)

    def to_dict(self, fit_ll: Optional[float] = None) -> Dict[str, Any]:
        return {'family': self.family.value, 'kernel': self.kernel.kind.value, 'mu': self.mu,
                'kappa': self.kernel.kappa, 'theta': self.kernel.theta, 'c': self.kernel.c,
                'N': self.population, 'fit_ll': fit_ll}

    def to_json(self, fit_ll: Optional[float] = None) -> str:
        return json.dumps(self.to_dict(fit_ll))

    @classmethod
    def from_dict(cls, item: Dict[str, Any]) -> 'ParametricModel':
        try:
            return cls(family=Family(item['family']),
                       kernel=Kernel(KernelKind(item['kernel']), float(item['kappa']), float(item['theta']),
                                     float(item.get('c') or 1.0)),
                       mu=float(item.get('mu') or 0.0),
                       population=item.get('N'))
        except KeyError as err:
            raise ValueError(f'Missing field {err} in the parametric model description') from err

    @classmethod
    def from_json(cls, text: str) -> 'ParametricModel':
        return cls.from_dict(json.loads(text))


class LogLikelihood(NamedTuple):
    """ A log-likelihood value, `finite` is False when an event has a non-positive intensity (value is -inf). """
    value: float
    finite: bool


def intensity(model: ParametricModel, history: Sequence[float], t: float) -> float:
    """
    Conditional intensity at time t, only the events strictly before t contribute.

    :param model: A Hawkes or HawkesN model.
    :param history: The sorted event times.
    :param t: The evaluation time.
    :return: λ(t).
    """
    if model.family == Family.MBP:
        raise ValueError('The MBP intensity is deterministic, use models.mbp.mbp_xi')

    history = np.asarray(history, dtype=float)
    past = history[history < t]
    excitation = float(np.sum(phi(model.kernel.kind, model.kernel.kappa, model.kernel.theta, model.kernel.c,
                                  t - past)))

    if model.family == Family.HAWKES:
        return model.mu + excitation

    nb_past = len(past)
    if nb_past > model.population:
        raise ValueError(f'The history has {nb_past} events but the population size is {model.population}')
    return (model.population - nb_past) / model.population * excitation


def _intensity_upper_bound(model: ParametricModel, events: np.ndarray, t: float) -> float:
    """ Intensity right after t (the events at t included), it bounds λ until the next event. """
    excitation = float(np.sum(phi(model.kernel.kind, model.kernel.kappa, model.kernel.theta, model.kernel.c,
                                  t - events)))
    if model.family == Family.HAWKES:
        return model.mu + excitation
    return max(0.0, (model.population - len(events)) / model.population) * excitation


def simulate(model: ParametricModel, horizon: float, seed: int, max_events: Optional[int] = None,
             immigrant: Optional[bool] = None, cascade_id: str = '') -> Cascade:
    """
    Sample event times on [0, horizon] by Ogata thinning. The candidate rate is the intensity right after the
    current time, an upper bound until the next accepted event because both kernels are non-increasing.

    :param model: A Hawkes or HawkesN model.
    :param horizon: The end of the simulation window.
    :param seed: The seed of the random generator.
    :param max_events: Stop after this number of events (None or 0 for no limit).
    :param immigrant: If True the cascade starts with an event at t = 0. Default: True iff mu == 0.
    :param cascade_id: The identifier of the produced cascade.
    :return: A cascade of point events.
    """
    if model.family == Family.MBP:
        raise ValueError('MBP has no event level simulation, simulate the matching Hawkes process')
    if not horizon > 0:
        raise ValueError(f'The simulation horizon should be > 0 (got {horizon})')

    rng = np.random.default_rng(seed)
    immigrant = model.immigrant_mode if immigrant is None else immigrant
    max_events = max_events or math.inf
    events = [0.0] if immigrant else []
    t = 0.0

    while len(events) < max_events:
        bound = _intensity_upper_bound(model, np.asarray(events), t)
        if bound <= 0:
            break
        t += rng.exponential(1 / bound)
        if t > horizon:
            break
        if rng.uniform() * bound <= intensity(model, events, t):
            events.append(t)

    return Cascade.from_event_times(events, horizon, cascade_id)


def _param_tensor(value: Union[float, torch.Tensor]) -> torch.Tensor:
    return value if isinstance(value, torch.Tensor) else torch.tensor(float(value), dtype=torch.float64)


def pad_event_times(cascades: Sequence[Cascade]) -> Dict[str, torch.Tensor]:
    """
    Right-pad the event times of the cascades in one float64 tensor.

    :return: times (B, L), mask (B, L) of valid events and horizons (B,).
    """
    max_len = max([c.nb_events for c in cascades] + [1])
    times = torch.zeros(len(cascades), max_len, dtype=torch.float64)
    mask = torch.zeros(len(cascades), max_len, dtype=torch.bool)
    for i, cascade in enumerate(cascades):
        event_times = cascade.event_times
        if any(not r.is_event for r in cascade.records):
            raise ValueError(f'Cascade "{cascade.id}" has censored intervals, the event likelihood needs events only')
        times[i, :len(event_times)] = torch.tensor(event_times, dtype=torch.float64)
        mask[i, :len(event_times)] = True
    horizons = torch.tensor([c.horizon for c in cascades], dtype=torch.float64)
    return {'times': times, 'mask': mask, 'horizons': horizons}


def event_loglik_tensor(family: Family, kind: KernelKind, params: Dict[str, Union[float, torch.Tensor]],
                        batch: Dict[str, torch.Tensor], population: Optional[int] = None,
                        condition_on_first: bool = False, floor: Optional[float] = None) -> torch.Tensor:
    """
    Differentiable event log-likelihood Σ log λ(t_i) - ∫_0^T λ, per cascade of a padded batch.

    :param family: Hawkes or HawkesN.
    :param kind: The kernel kind.
    :param params: mu, kappa, theta and c (floats or tensors).
    :param batch: Padded event times from pad_event_times.
    :param population: The population size (HawkesN).
    :param condition_on_first: If True the log term of the first event is skipped (immigrant at t = 0).
    :param floor: If set, intensities are clamped to this value under the log.
    :return: The log-likelihood of each cascade (B,).
    """
    mu = _param_tensor(params.get('mu', 0.0))
    kappa, theta = _param_tensor(params['kappa']), _param_tensor(params['theta'])
    c = _param_tensor(params.get('c', 1.0))
    times, mask, horizons = batch['times'], batch['mask'], batch['horizons']

    # tau[b, i, j] = t_i - t_j, only strictly earlier valid events excite
    tau = times.unsqueeze(2) - times.unsqueeze(1)
    exciting = (tau > 0) & mask.unsqueeze(1) & mask.unsqueeze(2)
    safe_tau = torch.where(exciting, tau, torch.ones_like(tau))
    excitation = torch.where(exciting, phi(kind, kappa, theta, c, safe_tau), torch.zeros_like(tau)).sum(dim=2)

    # Remaining window of each event, padding gets an empty window
    end_gap = torch.where(mask, horizons.unsqueeze(1) - times, torch.zeros_like(times))

    if family == Family.HAWKES:
        rates = mu + excitation
        compensator = mu * horizons + torch.where(
            mask, phi_integral(kind, kappa, theta, c, torch.zeros_like(times), end_gap), torch.zeros_like(times)
        ).sum(dim=1)
    elif family == Family.HAWKESN:
        nb_before = exciting.sum(dim=2).to(times.dtype)
        rates = (population - nb_before) / population * excitation
        compensator = _hawkesn_compensator(kind, kappa, theta, c, times, mask, horizons, population)
    else:
        raise ValueError(f'No event likelihood for the family "{family.value}"')

    if floor is not None:
        rates = rates.clamp(min=floor)
    log_terms = mask.clone()
    if condition_on_first:
        log_terms[:, 0] = False
    safe_rates = torch.where(log_terms, rates, torch.ones_like(rates))
    log_rates = torch.where(log_terms, torch.log(safe_rates), torch.zeros_like(rates)).sum(dim=1)

    return log_rates - compensator


def _hawkesn_compensator(kind, kappa, theta, c, times, mask, horizons, population) -> torch.Tensor:
    """
    Piecewise integral: between events k and k+1 the susceptible fraction is (N - k - 1) / N.
    """
    lengths = mask.sum(dim=1)
    # Segment ends: next event time, the horizon for the last valid event
    next_times = torch.cat([times[:, 1:], torch.zeros_like(times[:, :1])], dim=1)
    is_last = torch.arange(times.shape[1]).unsqueeze(0) == (lengths - 1).unsqueeze(1)
    seg_end = torch.where(is_last, horizons.unsqueeze(1), next_times)
    seg_end = torch.where(mask, seg_end, times)

    # window[b, k, j] = ∫ φ over [t_k - t_j, end_k - t_j] for j <= k
    start = times.unsqueeze(2) - times.unsqueeze(1)
    end = seg_end.unsqueeze(2) - times.unsqueeze(1)
    valid = (start >= 0) & mask.unsqueeze(1) & mask.unsqueeze(2) & torch.tril(torch.ones_like(start, dtype=torch.bool))
    safe_start = torch.where(valid, start, torch.zeros_like(start))
    safe_end = torch.where(valid, end, torch.zeros_like(end))
    windows = torch.where(valid, phi_integral(kind, kappa, theta, c, safe_start, safe_end),
                          torch.zeros_like(start)).sum(dim=2)

    susceptible = ((population - torch.arange(1, times.shape[1] + 1, dtype=times.dtype)) / population).clamp(min=0)
    return (windows * susceptible.unsqueeze(0) * mask).sum(dim=1)


def event_loglik(model: ParametricModel, cascade: Cascade) -> LogLikelihood:
    """
    Log-likelihood Σ log λ(t_i) - ∫_0^T λ(τ)dτ of a cascade of point events, the integral in closed form.
    In immigrant mode (mu = 0) the likelihood is conditioned on the first event.

    :param model: A Hawkes or HawkesN model.
    :param cascade: A cascade of point events.
    :return: The value, -inf with finite=False if an event has a non-positive intensity.
    """
    if model.family == Family.MBP:
        raise ValueError('MBP is fitted on interval counts, use models.mbp.mbp_ic_loglik')

    with torch.no_grad():
        value = event_loglik_tensor(model.family, model.kernel.kind, model.params(), pad_event_times([cascade]),
                                    model.population, condition_on_first=model.immigrant_mode)
    value = float(value[0])
    if math.isnan(value) or value == -math.inf:
        return LogLikelihood(-math.inf, False)
    return LogLikelihood(value, True)
