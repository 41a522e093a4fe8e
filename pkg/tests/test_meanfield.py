import math
import warnings

import numpy as np
import pytest

from popmjp.meanfield import (MeanPath, birth_death_system, calibrate, integrate, lotka_volterra_system,
                              sir_system)


def test_exponential_decay():
    path = integrate(birth_death_system(100, None), [1.0], 1.0, 1e-3, [0.0, 1.0])
    assert abs(path.values[-1, 0] - math.exp(-1)) < 1e-10


def test_zero_vector_field_is_constant():
    path = integrate(birth_death_system(100, None), [7.0], 3.0, 0.01, [0.0, 0.0])
    assert np.allclose(path.values, 7.0)


def test_sir_conserves_population():
    path = integrate(sir_system(), [0.99, 0.01, 0.0], 20.0, 0.01, [2.0, 1.0])
    assert np.allclose(path.values.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diff(path.values[:, 2]) >= 0)


def test_step_halving_converges():
    system = lotka_volterra_system(20.0)
    a = integrate(system, [30.0, 20.0], 20.0, 0.02, [0.125, 0.005, 0.005, 0.1])
    b = integrate(system, [30.0, 20.0], 20.0, 0.01, [0.125, 0.005, 0.005, 0.1])
    assert np.max(np.abs(a.values[-1] - b.values[-1])) < 1e-6


def test_calibration_recovers_rate():
    system = birth_death_system(50, 100.0)
    truth = integrate(system, [50.0], 100.0, 0.01, [0.5, 0.1])
    t = np.linspace(2, 100, 50)
    res = calibrate(system, t, truth.at(t), ["mu"], [(1e-4, 0.5)], fixed={"lam": 0.5}, xi0=[50.0],
                    T=100.0, step=0.01)
    assert abs(res.params["mu"] - 0.1) < 1e-3
    assert all(b <= a + 1e-15 for a, b in zip(res.history, res.history[1:]))


def test_flat_objective_warns_and_returns_midpoint():
    system = birth_death_system(50, None)
    with pytest.warns(RuntimeWarning, match="flat"):
        res = calibrate(system, [1.0, 2.0], [[0.0], [0.0]], ["mu"], [(0.1, 0.3)], fixed={"lam": 0.0},
                        xi0=[0.0], T=2.0)
    assert res.flat and res.params["mu"] == pytest.approx(0.2)


def test_calibration_input_errors():
    system = birth_death_system(50, None)
    with pytest.raises(ValueError):
        calibrate(system, [], np.zeros((0, 1)), ["mu"], [(0.1, 0.3)], fixed={"lam": 1.0}, xi0=[1.0], T=1.0)
    with pytest.raises(ValueError):
        calibrate(system, [1.0], [[1.0]], ["mu"], [(0.3, 0.1)], fixed={"lam": 1.0}, xi0=[1.0], T=1.0)


def test_mean_path_interpolation_and_csv(tmp_path):
    mp = MeanPath([0.0, 1.0, 2.0], [[0.0], [2.0], [4.0]])
    assert np.allclose(mp.at([0.5, 1.5, 5.0])[:, 0], [1.0, 3.0, 4.0])
    text = mp.to_csv(tmp_path / "m.csv")
    assert text.splitlines()[0] == "time,xi_0"
    with pytest.raises(ValueError):
        MeanPath([0.0, 1.0], [[0.0], [np.nan]])
