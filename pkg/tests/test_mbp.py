import math

import pytest

from classes.exceptions import CascadeError
from datasets.cascade import Cascade, CascadeRecord
from models.kernels import Kernel, KernelKind
from models.mbp import expected_future_count, mbp_compensator, mbp_ic_loglik, mbp_xi
from models.parametric import Family, ParametricModel


def mbp(kappa: float, theta: float, mu: float = 0.0) -> ParametricModel:
    return ParametricModel(Family.MBP, Kernel(KernelKind.EXPONENTIAL, kappa, theta), mu)


def immigrant_compensator(kappa: float, theta: float, t: float) -> float:
    """ Closed form of the exponential kernel: ξ(t) = κθ exp(-θ(1 - κ)t). """
    return kappa / (1 - kappa) * (1 - math.exp(-theta * (1 - kappa) * t))


def test_poisson_mean_intensity():
    grid = mbp_xi(mbp(0.0, 1.0, mu=2.0), horizon=5.0)
    assert grid.values.min().item() == pytest.approx(2.0)
    assert grid.values.max().item() == pytest.approx(2.0)
    assert mbp_compensator(mbp(0.0, 1.0, mu=2.0), 1.0, 3.0) == pytest.approx(4.0)


def test_poisson_interval_loglik():
    cascade = Cascade((CascadeRecord.interval(0.0, 1.0, 2), CascadeRecord.interval(1.0, 2.0, 3)), 3.0)
    expected = 2 * math.log(2.0) - 2.0 + 3 * math.log(4.0) - 4.0
    assert mbp_ic_loglik(mbp(0.0, 1.0, mu=2.0), cascade) == pytest.approx(expected, rel=1e-10)


def test_immigrant_mean_intensity():
    model = mbp(0.6, 1.5)
    grid = mbp_xi(model, horizon=4.0)
    assert grid.values[0].item() == pytest.approx(0.6 * 1.5)
    assert mbp_compensator(model, 0.0, 4.0, grid) == pytest.approx(immigrant_compensator(0.6, 1.5, 4.0), rel=1e-4)


def test_compensator_is_additive():
    model = mbp(0.5, 2.0, mu=0.3)
    grid = mbp_xi(model, horizon=3.0)
    whole = mbp_compensator(model, 0.2, 2.9, grid)
    assert mbp_compensator(model, 0.2, 1.37, grid) + mbp_compensator(model, 1.37, 2.9, grid) == pytest.approx(whole)


def test_events_are_rejected(mixed_cascade):
    with pytest.raises(CascadeError):
        mbp_ic_loglik(mbp(0.5, 1.0), mixed_cascade)


def test_hawkes_model_is_rejected():
    with pytest.raises(ValueError):
        mbp_xi(ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0)), 1.0)


def test_expected_future_count_poisson():
    model = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.0, 1.0), mu=1.5)
    assert expected_future_count(model, [0.1, 0.7], 1.0, 5.0) == pytest.approx(6.0)


def test_expected_future_count_of_the_immigrant():
    hawkes = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.6, 1.5))
    expected = immigrant_compensator(0.6, 1.5, 4.0)
    assert expected_future_count(hawkes, [0.0], 0.0, 4.0) == pytest.approx(expected, rel=1e-4)
    assert expected_future_count(mbp(0.6, 1.5), [], 0.0, 4.0) == pytest.approx(expected, rel=1e-4)


def test_history_increases_the_expected_count():
    hawkes = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.6, 1.5))
    assert expected_future_count(hawkes, [0.0, 0.8, 0.9], 1.0, 4.0) > expected_future_count(hawkes, [0.0], 1.0, 4.0)


def test_invalid_prediction_window():
    model = mbp(0.5, 1.0)
    with pytest.raises(ValueError):
        expected_future_count(model, [], 2.0, 2.0)


def test_immigrant_is_not_counted():
    model = mbp(0.6, 1.5)
    # The immigrant at t = 0 and 2 descendants
    cascade = Cascade((CascadeRecord.interval(0.0, 4.0, 3),), 4.0)
    expected_count = immigrant_compensator(0.6, 1.5, 4.0)
    expected = 2 * math.log(expected_count) - expected_count
    assert mbp_ic_loglik(model, cascade) == pytest.approx(expected, rel=1e-4)
