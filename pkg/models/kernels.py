"""
Decay kernels of the self-exciting processes.
The formulas accept python floats, numpy arrays or torch tensors, the torch path keeps the autograd graph so the same
code is used for simulation and for maximum likelihood fitting.
"""
import math
from dataclasses import dataclass
from enum import Enum, unique
from typing import Union

import numpy as np
import torch

Value = Union[float, np.ndarray, torch.Tensor]


@unique
class KernelKind(Enum):
    """ exponential: κθe^{-θτ}, power_law: κ(τ+c)^{-(1+θ)} """
    EXPONENTIAL = 'exponential'
    POWER_LAW = 'power_law'


@dataclass(frozen=True)
class Kernel:
    kind: KernelKind
    kappa: float
    theta: float
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', KernelKind(self.kind))
        if not math.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f'The kernel magnitude should be finite and >= 0 (got {self.kappa})')
        if not math.isfinite(self.theta) or self.theta <= 0:
            raise ValueError(f'The kernel decay should be finite and > 0 (got {self.theta})')
        if not math.isfinite(self.c) or self.c <= 0:
            raise ValueError(f'The kernel shift should be finite and > 0 (got {self.c})')

    @classmethod
    def power_law_from_mass(cls, mass: float, theta: float, c: float) -> 'Kernel':
        """ Power-law kernel whose integral over [0, ∞) is `mass`. """
        return cls(KernelKind.POWER_LAW, mass * theta * c ** theta, theta, c)

    @property
    def branching_factor(self) -> float:
        """ Expected number of direct offspring of one event. """
        return float(kernel_mass(self, 0.0, math.inf))


def _backend(*values):
    return torch if any(isinstance(v, torch.Tensor) for v in values) else np


def phi(kind: KernelKind, kappa: Value, theta: Value, c: Value, tau: Value) -> Value:
    """ Kernel value φ(τ) with unchecked parameters (τ ≥ 0 expected). """
    xp = _backend(kappa, theta, c, tau)
    if kind == KernelKind.EXPONENTIAL:
        return kappa * theta * xp.exp(-theta * tau)
    return kappa * (tau + c) ** (-(1 + theta))


def phi_integral(kind: KernelKind, kappa: Value, theta: Value, c: Value, a: Value, b: Value) -> Value:
    """ Closed-form ∫_a^b φ(τ)dτ with unchecked bounds (0 ≤ a ≤ b ≤ ∞ expected). """
    xp = _backend(kappa, theta, c, a, b)
    if kind == KernelKind.EXPONENTIAL:
        # κ e^{-θa} (1 - e^{-θ(b-a)})
        return -kappa * xp.exp(-theta * a) * xp.expm1(-theta * (b - a))
    return kappa / theta * ((a + c) ** (-theta) - (b + c) ** (-theta))


def kernel_value(kernel: Kernel, tau: Value) -> Value:
    """
    :param kernel: The decay kernel.
    :param tau: The elapsed time(s) since the exciting event, ≥ 0.
    :return: φ(τ), same shape as tau.
    """
    if bool((torch.as_tensor(tau) < 0).any()):
        raise ValueError('The kernel is only defined for non-negative elapsed times')
    return phi(kernel.kind, kernel.kappa, kernel.theta, kernel.c, tau)


def kernel_mass(kernel: Kernel, a: Value, b: Value = math.inf) -> Value:
    """
    :param kernel: The decay kernel.
    :param a: Start of the integration, ≥ 0.
    :param b: End of the integration, ≥ a (may be infinite).
    :return: ∫_a^b φ(τ)dτ, the expected number of offspring born in this delay window.
    """
    a_tensor, b_tensor = torch.as_tensor(a, dtype=torch.float64), torch.as_tensor(b, dtype=torch.float64)
    if bool((a_tensor < 0).any()) or bool((a_tensor > b_tensor).any()):
        raise ValueError(f'The integration bounds should satisfy 0 <= a <= b (got a={a}, b={b})')
    return phi_integral(kernel.kind, kernel.kappa, kernel.theta, kernel.c, a, b)
