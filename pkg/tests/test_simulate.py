import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from popmjp import InitialDistribution, RandomSource, RateKernel, split_streams
from popmjp.models import BirthDeathModel
from popmjp.simulate import (InvariantViolation, gillespie, gillespie_batch, series_truncation,
                             simulate_uniformized_batch, transition_probability_oracle)
from popmjp.verify import THREE_STATE_Q, prop1_suite


def test_oracle_rows_are_distributions():
    kernel = RateKernel.from_matrix(THREE_STATE_Q)
    for i in range(3):
        row = [transition_probability_oracle(kernel, 2.0, [i], [j], 0.8) for j in range(3)]
        assert abs(sum(row) - 1) < 1e-10
        assert transition_probability_oracle(kernel, 2.0, [i], [i], 0.0) == 1.0


def test_oracle_matches_matrix_exponential():
    from scipy.linalg import expm
    kernel = RateKernel.from_matrix(THREE_STATE_Q)
    P = expm(THREE_STATE_Q * 1.3)
    for omega in (1.5, 4.0):
        got = [[transition_probability_oracle(kernel, omega, [i], [j], 1.3) for j in range(3)]
               for i in range(3)]
        assert np.allclose(got, P, atol=1e-10)


def test_oracle_guards():
    kernel = RateKernel.from_matrix(THREE_STATE_Q)
    with pytest.raises(InvariantViolation):
        transition_probability_oracle(kernel, 1.0, [0], [1], 1.0)
    seasonal = BirthDeathModel(3, 1.0, 0.5, 1.0).kernel()
    with pytest.raises(ValueError):
        transition_probability_oracle(seasonal, 10.0, [0], [1], 1.0)


@given(st.floats(0.01, 500))
def test_series_truncation_tail(rate):
    K = series_truncation(rate)
    assert stats.poisson.sf(K, rate) < 1e-12
    assert K == 0 or stats.poisson.sf(K - 1, rate) >= 1e-12


def test_uniformized_matches_oracle(rng):
    res = prop1_suite(rng, n=20000, tol=0.02)
    assert res.passed, res.details


def test_gillespie_matches_uniformized_seasonal(rng):
    kernel = BirthDeathModel(5, 1.0, 0.5, 2.0).kernel()
    init = InitialDistribution.point([5])
    a = gillespie_batch(kernel, init, 2.0, 40000, rng, record=False)[:, 0]
    b = simulate_uniformized_batch(kernel, 2 * kernel.sup_exit_rate(), init, 2.0, 40000, rng,
                                   record=False)[:, 0]
    table = np.array([np.bincount(a, minlength=6), np.bincount(b, minlength=6)])
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table)[1] > 1e-3


def test_gillespie_marginal_matches_oracle(rng):
    kernel = RateKernel.from_matrix(THREE_STATE_Q)
    xs = gillespie_batch(kernel, InitialDistribution.point([0]), 1.0, 30000, rng, record=False)[:, 0]
    exact = np.array([transition_probability_oracle(kernel, 2.0, [0], [j], 1.0) for j in range(3)])
    assert stats.chisquare(np.bincount(xs, minlength=3), 30000 * exact)[1] > 1e-3


def test_paths_are_valid(rng):
    kernel = BirthDeathModel(5, 1.0, 0.5, 2.0).kernel()
    for traj in gillespie_batch(kernel, InitialDistribution.point([5]), 2.0, 50, rng):
        assert traj.times[0] == 0 and traj.horizon == 2.0
        assert np.all(np.abs(np.diff(traj.states[:, 0])) == 1)
        assert np.all((traj.states >= 0) & (traj.states <= 5))
    aug = simulate_uniformized_batch(kernel, 10.0, InitialDistribution.point([5]), 2.0, 5, rng)
    assert all(np.all(np.diff(a.times) > 0) for a in aug)


def test_streams_reproducible_and_distinct():
    a = [g.random(3) for g in split_streams(7, 3)]
    b = [g.random(3) for g in split_streams(7, 3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])
    kernel = BirthDeathModel(5, 1.0, 0.5, 2.0).kernel()
    t1 = gillespie(kernel, InitialDistribution.point([5]), 2.0, RandomSource(11))
    t2 = gillespie(kernel, InitialDistribution.point([5]), 2.0, RandomSource(11))
    assert t1.to_csv() == t2.to_csv()
