import math

import numpy as np
import pytest
import torch
from scipy.integrate import quad

from datasets.cascade import Cascade
from models.kernels import Kernel, KernelKind, kernel_mass, kernel_value, phi
from models.parametric import Family, ParametricModel, event_loglik, intensity, simulate


def hawkes(kappa: float, theta: float, mu: float = 0.0, kind=KernelKind.EXPONENTIAL) -> ParametricModel:
    return ParametricModel(Family.HAWKES, Kernel(kind, kappa, theta), mu)


@pytest.mark.parametrize(
    "name,kernel,expected",
    [
        ["exponential", Kernel(KernelKind.EXPONENTIAL, 0.7, 2.0), 0.7],
        ["power law", Kernel.power_law_from_mass(0.8, 0.5, 2.0), 0.8],
    ],
)
def test_branching_factor(name, kernel, expected):
    assert kernel.branching_factor == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("kind", [KernelKind.EXPONENTIAL, KernelKind.POWER_LAW])
def test_kernel_mass_matches_quadrature(kind):
    kernel = Kernel(kind, 0.6, 1.3, 0.5)
    numeric, _ = quad(lambda tau: float(kernel_value(kernel, tau)), 0.25, 3.0)
    assert float(kernel_mass(kernel, 0.25, 3.0)) == pytest.approx(numeric, rel=1e-8)


def test_kernel_keeps_autograd():
    kappa = torch.tensor(0.5, dtype=torch.float64, requires_grad=True)
    tau = torch.tensor([0.0, 1.0], dtype=torch.float64)
    phi(KernelKind.EXPONENTIAL, kappa, 1.0, 1.0, tau).sum().backward()
    assert float(kappa.grad) == pytest.approx(1.0 + math.exp(-1.0))


@pytest.mark.parametrize(
    "name,kwargs",
    [
        ["negative kappa", {'kind': KernelKind.EXPONENTIAL, 'kappa': -0.1, 'theta': 1.0}],
        ["zero theta", {'kind': KernelKind.EXPONENTIAL, 'kappa': 0.1, 'theta': 0.0}],
        ["zero shift", {'kind': KernelKind.POWER_LAW, 'kappa': 0.1, 'theta': 1.0, 'c': 0.0}],
    ],
)
def test_invalid_kernel(name, kwargs):
    with pytest.raises(ValueError):
        Kernel(**kwargs)


def test_negative_elapsed_time():
    with pytest.raises(ValueError):
        kernel_value(Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0), -1.0)


def test_hawkesn_requires_population_and_no_background():
    kernel = Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0)
    with pytest.raises(ValueError):
        ParametricModel(Family.HAWKESN, kernel)
    with pytest.raises(ValueError):
        ParametricModel(Family.HAWKESN, kernel, mu=1.0, population=10)


def test_poisson_loglik():
    cascade = Cascade.from_event_times([0.5, 1.0, 3.0], horizon=4.0)
    result = event_loglik(hawkes(0.0, 1.0, mu=2.0), cascade)
    assert result.finite
    assert result.value == pytest.approx(3 * math.log(2.0) - 8.0, rel=1e-12)


def test_exponential_loglik_conditioned_on_immigrant():
    cascade = Cascade.from_event_times([0.0, 1.0], horizon=2.0)
    expected = math.log(0.5 * math.exp(-1.0)) - 0.5 * (1 - math.exp(-2.0)) - 0.5 * (1 - math.exp(-1.0))
    assert event_loglik(hawkes(0.5, 1.0), cascade).value == pytest.approx(expected, rel=1e-12)


def test_zero_intensity_event_is_not_finite():
    # No background and no excitation: the second event has a zero intensity
    cascade = Cascade.from_event_times([0.0, 1.0], horizon=2.0)
    result = event_loglik(hawkes(0.0, 1.0), cascade)
    assert not result.finite
    assert result.value == -math.inf


def test_hawkesn_with_large_population_is_hawkes():
    cascade = Cascade.from_event_times([0.0, 0.4, 0.9, 2.0], horizon=3.0)
    kernel = Kernel(KernelKind.POWER_LAW, 0.4, 0.8, 1.0)
    hawkes_ll = event_loglik(ParametricModel(Family.HAWKES, kernel), cascade).value
    hawkesn_ll = event_loglik(ParametricModel(Family.HAWKESN, kernel, population=10 ** 9), cascade).value
    assert hawkesn_ll == pytest.approx(hawkes_ll, rel=1e-6)


def test_hawkesn_intensity_shrinks_with_history():
    model = ParametricModel(Family.HAWKESN, Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0), population=4)
    hawkes_value = intensity(hawkes(0.5, 1.0), [0.0, 0.5], 1.0)
    assert intensity(model, [0.0, 0.5], 1.0) == pytest.approx(hawkes_value * 2 / 4)


def test_simulate_is_deterministic():
    model = hawkes(0.6, 1.5)
    first, second = simulate(model, 20.0, seed=3), simulate(model, 20.0, seed=3)
    assert first == second
    assert first.event_times[0] == 0.0
    assert first.event_times == sorted(first.event_times)


def test_simulate_max_events():
    cascade = simulate(hawkes(0.0, 1.0, mu=10.0), 100.0, seed=0, max_events=7)
    assert cascade.nb_events == 7


def test_simulated_poisson_count():
    counts = [simulate(hawkes(0.0, 1.0, mu=5.0), 10.0, seed=s).nb_events for s in range(200)]
    assert np.mean(counts) == pytest.approx(50.0, abs=2.5)


def test_simulated_hawkes_mean_size():
    # One immigrant and a branching factor of 0.5: 2 events on average for a long horizon
    sizes = [simulate(hawkes(0.5, 2.0), 50.0, seed=s).nb_events for s in range(400)]
    assert np.mean(sizes) == pytest.approx(2.0, abs=0.3)


def test_simulate_mbp_is_rejected():
    with pytest.raises(ValueError):
        simulate(ParametricModel(Family.MBP, Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0)), 1.0, seed=0)


def test_model_json():
    model = ParametricModel(Family.HAWKESN, Kernel(KernelKind.POWER_LAW, 0.3, 0.7, 2.0), population=50)
    assert ParametricModel.from_json(model.to_json(fit_ll=-1.5)) == model
