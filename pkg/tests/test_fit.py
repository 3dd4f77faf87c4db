import pytest

from datasets.cascade import Cascade
from datasets.reconstruction import events_to_intervals
from models.kernels import Kernel, KernelKind
from models.parametric import Family, ParametricModel, simulate
from models.parametric_fit import FitConfig, fit


def test_poisson_rate():
    cascades = [Cascade.from_event_times([0.5 + k for k in range(n)], horizon=10.0) for n in (5, 7, 9)]
    init = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.0, 1.0), mu=1.0)
    result = fit(cascades, Family.HAWKES, init, FitConfig(), fixed=('theta',))

    # kappa = 0 can't move in log space
    assert result.model.kernel.kappa == 0.0
    assert result.model.mu == pytest.approx(21 / 30, rel=1e-5)


def test_no_free_parameter(event_cascade):
    init = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0))
    result = fit([event_cascade], Family.HAWKES, init, FitConfig(), fixed=('kappa', 'theta'))
    assert result.model == init
    assert result.nb_iterations == 0


@pytest.mark.parametrize(
    "name,kwargs",
    [
        ["family mismatch", {'family': Family.MBP}],
        ["unknown fixed parameter", {'fixed': ('alpha',)}],
    ],
)
def test_invalid_fit(event_cascade, name, kwargs):
    init = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.5, 1.0))
    arguments = {'cascades': [event_cascade], 'family': Family.HAWKES, 'init': init, 'config': FitConfig()}
    arguments.update(kwargs)
    with pytest.raises(ValueError):
        fit(**arguments)


def test_fit_improves_the_likelihood():
    truth = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.6, 1.5))
    cascades = [simulate(truth, 30.0, seed=s) for s in range(40)]
    init = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.2, 0.5))
    start = fit(cascades, Family.HAWKES, init, FitConfig(), fixed=('kappa', 'theta')).log_likelihood
    assert fit(cascades, Family.HAWKES, init, FitConfig()).log_likelihood > start


@pytest.mark.slow
def test_hawkes_parameter_recovery():
    truth = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.6, 1.5))
    cascades = [simulate(truth, 30.0, seed=s) for s in range(300)]
    init = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.3, 1.0))
    fitted = fit(cascades, Family.HAWKES, init, FitConfig()).model

    assert fitted.kernel.kappa == pytest.approx(0.6, rel=0.15)
    assert fitted.kernel.theta == pytest.approx(1.5, rel=0.15)


@pytest.mark.slow
def test_mbp_fit_on_interval_counts():
    truth = ParametricModel(Family.HAWKES, Kernel(KernelKind.EXPONENTIAL, 0.6, 1.5))
    cascades = [events_to_intervals(simulate(truth, 30.0, seed=s)) for s in range(300)]
    init = ParametricModel(Family.MBP, Kernel(KernelKind.EXPONENTIAL, 0.3, 1.0))
    fitted = fit(cascades, Family.MBP, init, FitConfig(grid_size=512)).model

    assert fitted.kernel.branching_factor == pytest.approx(0.6, rel=0.25)
