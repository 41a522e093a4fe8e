import math

import numpy as np
import pytest
from scipy import stats

from popmjp import AugmentedTrajectory, InitialDistribution, RandomSource
from popmjp.core import StateSpace
from popmjp.envelopes import (GammaEnvelopeParams, NormalEnvelope, NormalEnvelopeParams, SeparableTerm,
                              SplitScheme, apply_split, assemble_terms, draw_gamma_envelope,
                              draw_normal_envelope, gamma_constraints, lag_epochs, normal_constraints)
from popmjp.ffbs import backward_sample, forward_filter
from popmjp.models import BirthDeathModel, ObservationSet
from popmjp.samplers import (SamplerConfig, _base_constraints, _detection, _run_compiled, build_epoch_steps,
                             resolve_omega, sample_candidate_times, sample_compensation)


def random_aug(rng, n=40, d=1, upper=20):
    times = np.concatenate(([0.0], np.sort(rng.random(n - 1)) * 10))
    states = rng.integers(0, upper + 1, size=(n, d))
    return AugmentedTrajectory(times, states, 10.0)


def random_walk_aug(rng, n=30, start=10, upper=40):
    steps = rng.integers(-1, 2, size=n - 1)
    states = np.clip(start + np.concatenate(([0], np.cumsum(steps))), 0, upper)
    times = np.concatenate(([0.0], np.sort(rng.random(n - 1)) * 10))
    return AugmentedTrajectory(times, states[:, None], 10.0)


def test_params_validation():
    with pytest.raises(ValueError):
        NormalEnvelopeParams(0.0, 1.0)
    with pytest.raises(ValueError):
        NormalEnvelopeParams(1.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        GammaEnvelopeParams(0.0, 1.0, 1.0, 5)
    with pytest.raises(ValueError):
        GammaEnvelopeParams(0.0, 1.0, 0.5, 0)


def test_normal_windows_contain_current_path(rng):
    space = StateSpace([0, 0], [20, 20])
    for _ in range(20):
        aug = random_aug(rng, d=2)
        xi = rng.uniform(0, 20, size=(aug.n_epochs, 2))
        env = draw_normal_envelope(aug, xi, NormalEnvelopeParams(2.0, 1.0, 0.5), rng)
        assert np.all(np.abs(aug.states[1:] - xi[1:]) < env.radii[1:])
        cons = normal_constraints(env, space)
        assert np.all((cons.lo <= aug.states) & (aug.states <= cons.hi))


def test_normal_window_example():
    M = 3
    env = NormalEnvelope(NormalEnvelopeParams(1.0, 1.0), np.full((M, 1), 2.5), np.full((M, 1), 1.0),
                         np.full((M, 1), 10.0))
    cons = normal_constraints(env, StateSpace([0], [30]))
    assert cons.lo[1:, 0].tolist() == [8, 8] and cons.hi[1:, 0].tolist() == [12, 12]
    assert cons.lo[0, 0] == 0 and cons.hi[0, 0] == 30
    ew, off = assemble_terms(cons.lo, cons.hi, cons.terms)
    at_center = ew[off[1, 0] + 10 - cons.lo[1, 0]]
    assert math.isclose(at_center, -math.log(stats.norm.cdf(1.0)), rel_tol=1e-12)
    assert math.isclose(math.exp(-at_center), 0.8413447460685429, rel_tol=1e-12)


def test_normal_mean_reversion_with_unit_kappa(rng):
    aug = random_aug(rng)
    xi = np.full((aug.n_epochs, 1), 10.0)
    env = draw_normal_envelope(aug, xi, NormalEnvelopeParams(3.0, 1.0, 1.0), rng)
    expected = np.maximum(3.0, env.radii[1:-1, 0] - 1.0)
    assert np.allclose(env.means[2:, 0], expected)
    assert env.means[1, 0] == 3.0


def test_gamma_slack_moments(rng):
    params = GammaEnvelopeParams(0.7, 0.4, 0.2, 1, 3)
    aug = random_aug(rng, n=20001)
    xi = np.full((aug.n_epochs, 1), 10.0)
    env = draw_gamma_envelope(aug, xi, params, rng)
    z = env.slack[:, 0] / np.exp(env.log_means[:, 0])
    n = len(z)
    assert abs(z.mean() - 1.0) < 3 * math.sqrt(1 / 3 / n)
    assert abs(z.var() - 1 / 3) < 0.02
    dev = np.abs(aug.states[env.epochs] - xi[env.epochs])
    assert np.allclose(env.radii - dev, env.slack)


def test_gamma_log_mean_autoregression(rng):
    params = GammaEnvelopeParams(0.0, 0.5, 0.3, 2, 2)
    first = []
    for _ in range(4000):
        env = draw_gamma_envelope(random_aug(rng, n=8), np.zeros((8, 1)), params, rng)
        first.append(env.log_means[:2, 0])
    first = np.array(first)
    assert abs(first[:, 0].var() / params.stationary_variance - 1) < 0.1
    phi = (1 - params.kappa) ** params.lag
    assert abs(np.corrcoef(first.T)[0, 1] - phi) < 0.05


def test_gamma_constraints_windows_and_expansion(rng):
    space = StateSpace([0], [40])
    aug = random_walk_aug(rng)
    xi = np.full((aug.n_epochs, 1), 10.0)
    env = draw_gamma_envelope(aug, xi, GammaEnvelopeParams(1.0, 0.3, 0.5, 5, 2), rng)
    cons = gamma_constraints(env, space, aug.n_epochs)
    assert np.all((cons.lo <= aug.states) & (aug.states <= cons.hi))
    for k, e in enumerate(env.epochs):
        xs = np.arange(cons.lo[e, 0], cons.hi[e, 0] + 1)
        assert np.all(np.abs(xs - 10.0) < env.radii[k, 0])
        nxt = e + 1
        if nxt < aug.n_epochs and nxt not in env.epochs:
            assert cons.lo[nxt, 0] == max(cons.lo[e, 0] - 1, 0)
            assert cons.hi[nxt, 0] == min(cons.hi[e, 0] + 1, 40)


def test_gamma_envelope_rejects_large_jumps(rng):
    aug = random_aug(rng)
    with pytest.raises(NotImplementedError):
        draw_gamma_envelope(aug, np.zeros((aug.n_epochs, 1)), GammaEnvelopeParams(0, 1, 0.5, 3), rng, [2])


def test_lag_epochs(rng):
    for _ in range(50):
        idx = lag_epochs(100, 10, rng)
        assert 1 <= idx[0] <= 10 and np.all(np.diff(idx) == 10)
        idx = lag_epochs(100, 10, rng, randomize=True)
        gap = np.diff(idx)
        assert np.all(gap == gap[0]) and 8 <= gap[0] <= 12


def test_bridge_pins_and_partition_blocks(rng):
    space = StateSpace([0, 0], [20, 20])
    aug = random_aug(rng, n=50, d=2)
    cons, idx = apply_split(aug, SplitScheme("bridge", 6), space, rng)
    assert np.all(cons.lo[idx] == aug.states[idx]) and np.all(cons.hi[idx] == aug.states[idx])
    free = np.setdiff1d(np.arange(aug.n_epochs), idx)
    assert np.all(cons.lo[free] == 0) and np.all(cons.hi[free] == 20)
    cons, idx = apply_split(aug, SplitScheme("partition", 6, 4), space, rng)
    assert np.all((cons.lo[idx] <= aug.states[idx]) & (aug.states[idx] <= cons.hi[idx]))
    assert np.all(cons.hi[idx] - cons.lo[idx] <= 3)
    assert np.all(cons.lo[idx] % 4 == 0)
    whole, _ = apply_split(aug, SplitScheme("partition", 6, 21), space, rng)
    assert np.all(whole.lo == 0) and np.all(whole.hi == 20)


def test_compiled_fills_match_vectorized_terms(rng):
    space = StateSpace([0, 0], [30, 30])
    aug = random_aug(rng, n=60, d=2, upper=30)
    xi = rng.uniform(5, 25, size=(aug.n_epochs, 2))
    obs = ObservationSet("noisy", np.sort(rng.random(15) * 10), rng.normal(15, 5, size=(15, 2)), 2.0, (0, 1))
    parts = [normal_constraints(draw_normal_envelope(aug, xi, NormalEnvelopeParams(3.0, 2.0, 0.5), rng), space),
             gamma_constraints(draw_gamma_envelope(aug, xi, GammaEnvelopeParams(2.0, 0.3, 0.5, 4, 2), rng),
                               space, aug.n_epochs),
             obs.epoch_constraints(aug.times, space)]
    for cons in parts:
        assert all(isinstance(t, SeparableTerm) for t in cons.terms)
        lo, hi = np.minimum(cons.lo, aug.states), np.maximum(cons.hi, aug.states)
        fast, off1 = assemble_terms(lo, hi, cons.terms)
        slow, off2 = assemble_terms(lo, hi, [t.func for t in cons.terms])
        assert np.array_equal(off1, off2)
        assert np.array_equal(np.isfinite(fast), np.isfinite(slow))
        ok = np.isfinite(fast)
        assert np.allclose(fast[ok], slow[ok], rtol=1e-10, atol=1e-10)


def _joint_invariance(envelope, n=6000, seed=11):
    """x from the exact conditional, u | x, then x' | u must follow the same law."""
    rng = RandomSource(seed)
    m = BirthDeathModel(6, 1.0, 0.4, 2.0, seasonal=True, initial=InitialDistribution.uniform_box([2], [5]))
    kernel = m.kernel()
    path = m.simulate(m.params, rng)
    obs = [ObservationSet("noisy", [0.6, 1.4], [[3.0], [4.0]], 1.0)]
    plain = SamplerConfig("nonstationary")
    omega = resolve_omega(kernel, plain)
    aug = sample_candidate_times(path, kernel, plain.psi, rng, omega)
    ev = sample_compensation(aug, kernel, omega, plain.psi, rng, plain.variant)
    det = _detection(kernel, obs)
    cons0 = _base_constraints(aug, kernel, m.initial, obs, plain, rng, None)
    steps = build_epoch_steps(aug, ev, plain, kernel, omega, cons0, det)
    exact = backward_sample(forward_filter(steps, m.initial), steps, rng, size=n)[:, :, 0]
    cfg = SamplerConfig("nonstationary", envelope=envelope)
    center = lambda t: np.full((len(t), 1), 3.7)
    out = np.empty_like(exact)
    for k in range(n):
        cur = AugmentedTrajectory(aug.times, exact[k], aug.horizon)
        cons = _base_constraints(cur, kernel, m.initial, obs, cfg, rng, center)
        out[k] = _run_compiled(aug, ev, kernel, m.initial, cfg, omega, cons, det, rng, {})[:, 0]
    ref = backward_sample(forward_filter(steps, m.initial), steps, rng, size=n)[:, :, 0]
    worst = 0.0
    for i in range(aug.n_epochs):
        a = np.bincount(out[:, i], minlength=7) / n
        b = np.bincount(ref[:, i], minlength=7) / n
        worst = max(worst, 0.5 * np.abs(a - b).sum())
    return worst


def test_normal_envelope_preserves_conditional_law():
    assert _joint_invariance(NormalEnvelopeParams(0.8, 0.8, 0.5)) < 0.04


def test_gamma_envelope_preserves_conditional_law():
    assert _joint_invariance(GammaEnvelopeParams(0.0, 0.3, 0.5, 2, 2)) < 0.04
