import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from popmjp import BirthDeathModel, MJPPosterior, ObservationSet, RandomSource, SamplerConfig
from popmjp.estimator import paths_on_grid, run_chain


@pytest.fixture(scope="module")
def data():
    m = BirthDeathModel(10, 1.0, 0.2, 5.0)
    truth = m.simulate(m.params, RandomSource(0))
    obs = m.equally_spaced_observations(truth, 6, 1.0, RandomSource(1))
    return m, obs


def test_params_and_clone(data):
    m, _ = data
    est = MJPPosterior(m, SamplerConfig(), n_sweeps=20, burn_in=5, random_state=3)
    p = est.get_params()
    assert p["n_sweeps"] == 20 and p["random_state"] == 3
    other = clone(est)
    assert other.get_params()["burn_in"] == 5 and not hasattr(other, "trace_")


def test_unfitted_raises(data):
    with pytest.raises(NotFittedError):
        MJPPosterior(data[0]).predict([1.0])


def test_fit_predict(data):
    m, obs = data
    est = MJPPosterior(m, n_sweeps=30, burn_in=10, thin=2, random_state=4).fit(obs)
    assert est.n_samples_ == 10 and len(est.path_times_) == 10
    grid = np.linspace(0, 5, 11)
    pred = est.predict(grid)
    lo, hi = est.predict_interval(grid, 0.9)
    assert pred.shape == (11, 1) and np.all(lo <= pred + 1e-12) and np.all(pred <= hi + 1e-12)
    assert est.param_samples().shape == (10, 2)
    assert np.all(est.param_samples()[:, 0] == 1.0)


def test_fit_with_arrays_is_reproducible(data):
    m, obs = data
    a = MJPPosterior(m, n_sweeps=10, burn_in=0, random_state=7).fit(obs.times, obs.values)
    b = MJPPosterior(m, n_sweeps=10, burn_in=0, random_state=7).fit(obs.times, obs.values)
    assert np.array_equal(a.param_samples(), b.param_samples())
    with pytest.raises(ValueError):
        MJPPosterior(m).fit(obs.times)


def test_run_chain_validation(data):
    m, obs = data
    with pytest.raises(ValueError):
        run_chain(m, SamplerConfig(), [obs], 10, RandomSource(0), thin=0)
    res = run_chain(m, SamplerConfig(), [obs], 0, RandomSource(0))
    assert len(res.trace) == 0


def test_paths_on_grid():
    out = paths_on_grid([np.array([0.0, 1.0])], [np.array([[1], [2]])], [0.0, 0.5, 1.0, 2.0])
    assert out[0, :, 0].tolist() == [1, 1, 2, 2]
