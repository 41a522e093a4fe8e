"""Exit criteria at their stated scales and tolerances.

Each test prints one ``PASS Cn ...`` or ``FAIL Cn ...`` line.  Run only
these with ``pytest -m acceptance -s``; they take roughly an hour on one
core.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from popmjp import (BirthDeathModel, GammaEnvelopeParams, LotkaVolterraModel, NormalEnvelopeParams, Psi,
                    RandomSource, SamplerConfig, SIRModel, SplitScheme, gillespie, resample_trajectory,
                    state_at)
from popmjp.diagnostics import effective_sample_size
from popmjp.estimator import run_chain
from popmjp.models import sir_mh_baseline_sweep
from popmjp.samplers import MemoryBudgetExceeded, gibbs_sweep
from popmjp.simulate import gillespie_batch
from popmjp.verify import ffbs_suite, geweke_suite, lemma1_suite, prop1_suite

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name} {detail}")
        assert ok, f"{name}: {detail}"
    return emit


def central_interval(x, level=0.95):
    tail = (1 - level) / 2
    return np.quantile(x, [tail, 1 - tail])


# -- C1 .. C3: exactness ------------------------------------------------------

def test_c1_uniformized_simulation_matches_oracle(report):
    start = time.perf_counter()
    res = prop1_suite(RandomSource(101), n=100_000, tol=0.01)
    sec = time.perf_counter() - start
    dev = res.details["max_abs_deviation"]
    report("C1", res.passed and sec < 30, f"max |freq - oracle| = {dev:.4f} (< 0.01), {sec:.1f} s (< 30 s)")


def test_c2_weight_limit(report):
    start = time.perf_counter()
    res = lemma1_suite(RandomSource(102), n=100_000)
    sec = time.perf_counter() - start
    z = np.abs(res.details["z_scores"]).max()
    report("C2", res.passed and sec < 10,
           f"max |z| = {z:.2f} (< 4), MSE decreasing = {res.details['monotone']}, {sec:.1f} s (< 10 s)")


def test_c3_ffbs_matches_enumeration(report):
    start = time.perf_counter()
    res = ffbs_suite(RandomSource(103), n_instances=200, n_draws=100_000, tol=0.01)
    sec = time.perf_counter() - start
    report("C3", res.passed and sec < 120,
           f"max TV = {res.details['max_tv']:.4f} (< 0.01) over 200 instances, {sec:.1f} s (< 120 s)")


# -- C4: invariance of the prior without data -------------------------------

def test_c4_samplers_leave_prior_invariant(report):
    m = BirthDeathModel(5, 1.0, 0.5, 2.0, seasonal=False)
    kernel, init, T = m.kernel(), m.initial, 2.0
    n = 100_000
    ref_rng = RandomSource(104)
    ref = gillespie_batch(kernel, init, T / 2, n, ref_rng, record=False)[:, 0]
    exact = np.bincount(ref, minlength=6) / n
    start = time.perf_counter()
    tvs = {}
    for k, variant in enumerate(["naive", "stationary", "nonstationary", "vanilla"]):
        rng = RandomSource([104, k])
        cfg = SamplerConfig(variant)
        path = gillespie(kernel, init, T, rng)
        occ = np.zeros(6)
        for _ in range(n):
            path = resample_trajectory(path, kernel, init, cfg, rng)
            occ[int(path.state_at(T / 2)[0])] += 1
        tvs[variant] = 0.5 * np.abs(occ / n - exact).sum()
    sec = time.perf_counter() - start
    ok = max(tvs.values()) < 0.02 and sec < 300
    detail = ", ".join(f"{v} TV = {tv:.4f}" for v, tv in tvs.items())
    report("C4", ok, f"{detail} (< 0.02), {sec:.1f} s (< 300 s)")


# -- C5: posterior agreement across samplers --------------------------------

def test_c5_vanilla_and_envelope_posteriors_agree(report):
    rng = RandomSource(105)
    m = BirthDeathModel(50, 0.5, 0.01, 100.0)
    truth = m.simulate(m.params, rng)
    obs = [m.equally_spaced_observations(truth, 50, 1.0, rng)]
    m.calibrate_mean(obs[0])
    draws = {}
    configs = {"vanilla": SamplerConfig("vanilla"),
               "envelope": SamplerConfig("nonstationary", envelope=NormalEnvelopeParams(5.0, 1.3, 1.0))}
    for k, (name, cfg) in enumerate(configs.items()):
        res = run_chain(m, cfg, obs, 500 + 5000 * 10, RandomSource([105, k]), burn_in=500, thin=10,
                        keep_paths=False)
        draws[name] = res.trace.column("mu")
    ks = stats.ks_2samp(draws["vanilla"], draws["envelope"]).statistic
    report("C5", ks < 0.05, f"KS = {ks:.4f} (< 0.05) on {len(draws['vanilla'])} draws each, "
           f"posterior means {draws['vanilla'].mean():.5f} / {draws['envelope'].mean():.5f}")


# -- C6: efficiency trend ---------------------------------------------------

def _ess_per_second(res, name):
    x = res.trace.column(name)
    return effective_sample_size(x) / float(np.sum(res.trace.seconds))


def test_c6_envelope_beats_vanilla_on_birth_death(report):
    N = 1000
    rng = RandomSource(106)
    m = BirthDeathModel(N, N / 100, 0.01, 100.0)
    truth = m.simulate(m.params, rng)
    obs = [m.equally_spaced_observations(truth, 50, N / 50, rng)]
    m.calibrate_mean(obs[0])
    env = SamplerConfig("nonstationary", "exit", envelope=NormalEnvelopeParams(math.sqrt(N), 1.575, 0.05))
    rates = {}
    for k, (name, cfg) in enumerate([("vanilla", SamplerConfig("vanilla")), ("envelope", env)]):
        res = run_chain(m, cfg, obs, 800, RandomSource([106, k]), burn_in=100, keep_paths=False)
        rates[name] = _ess_per_second(res, "mu")
    ratio = rates["envelope"] / rates["vanilla"]
    report("C6 (birth-death)", ratio >= 2,
           f"N = {N}: ESS/s envelope {rates['envelope']:.3g} vs vanilla {rates['vanilla']:.3g}, "
           f"ratio {ratio:.2f} (>= 2)")


def test_c6_stationary_gamma_envelope_completes_on_sir(report):
    N = 200
    m = SIRModel(N, 2.0 / N, 1.0)
    _, R = m.simulate_epidemic(RandomSource(11), int(0.8 * N))
    m.removal_times = R
    m.calibrate_mean()
    alg2 = SamplerConfig("stationary", envelope=GammaEnvelopeParams(math.log(N / 10), 0.25, 0.5, 25, 2))
    sweeps = 300
    res = run_chain(m, alg2, [], sweeps, RandomSource([106, 2]), chain=m.initial_chain(), keep_paths=False)
    fast = min(_ess_per_second(res, p) for p in m.param_names)
    completed = len(res.trace) == sweeps
    try:
        van = run_chain(m, SamplerConfig("vanilla"), [], sweeps, RandomSource([106, 3]),
                        chain=m.initial_chain(), keep_paths=False)
        slow = max(_ess_per_second(van, p) for p in m.param_names)
        outcome = f"vanilla completed with ESS/s {slow:.3g}, {fast / slow:.2f}x slower (>= 5)"
        ok = completed and fast >= 5 * slow
    except MemoryBudgetExceeded as err:
        outcome = f"vanilla failed the memory budget ({err})"
        ok = completed
    report("C6 (SIR)", ok, f"N = {N}: stationary + gamma envelope completed {len(res.trace)} sweeps "
           f"(ESS/s {fast:.3g}); {outcome}")


# -- C7: SIR correctness ----------------------------------------------------

def _sir_dataset(seed, N=50):
    m = SIRModel(N, 2.0 / N, 1.0)
    _, R = m.simulate_epidemic(RandomSource(seed), int(0.8 * N))
    m.removal_times = R
    return m


def _removal_violations(chain, R):
    """Count structural violations of the observed removals in one path."""
    path = chain.path
    s, i = path.states[:, 0], path.states[:, 1]
    rem = np.nonzero((np.diff(s) == 0) & (np.diff(i) == -1))[0] + 1
    bad = 0
    if len(rem) != len(R) or not np.array_equal(np.sort(path.tags[rem]), np.arange(len(R))):
        bad += 1
    elif not np.allclose(path.times[rem] + chain.t0, R[path.tags[rem]], rtol=0, atol=1e-9):
        bad += 1
    if np.any(path.tags[np.setdiff1d(np.arange(len(path.times)), rem)] >= 0):
        bad += 1
    if np.any(i[:-1] < 1) or i[-1] != 0:
        bad += 1
    return bad


def test_c7a_removals_are_structural(report):
    m = _sir_dataset(70)
    cfg = SamplerConfig("nonstationary")
    rng = RandomSource(107)
    chain = m.initial_chain()
    violations = 0
    for _ in range(10_000):
        chain = gibbs_sweep(chain, m, cfg, [], rng)
        violations += _removal_violations(chain, m.removal_times)
    report("C7a", violations == 0, f"{violations} removal violations over 10000 sweeps (== 0)")


def test_c7b_sir_coverage(report):
    truth = np.array([2.0 / 50, 1.0])
    cover = np.zeros(2, dtype=int)
    for r in range(20):
        m = _sir_dataset([71, r])
        res = run_chain(m, SamplerConfig("nonstationary"), [], 3000, RandomSource([107, r]), burn_in=500,
                        chain=m.initial_chain(), keep_paths=False)
        for k, name in enumerate(m.param_names):
            lo, hi = central_interval(res.trace.column(name))
            cover[k] += lo <= truth[k] <= hi
    report("C7b", bool(np.all(cover >= 17)), f"95% intervals cover beta {cover[0]}/20, gamma {cover[1]}/20 (>= 17)")


def test_c7c_uniformization_matches_metropolis_hastings(report):
    m = _sir_dataset(70)
    n = 5000
    unif = run_chain(m, SamplerConfig("nonstationary"), [], 1000 + 10 * n, RandomSource([107, 100]),
                     burn_in=1000, thin=10, chain=m.initial_chain(), keep_paths=False)
    mh = run_chain(m, SamplerConfig(), [], 1000 + 30 * n, RandomSource([107, 101]), burn_in=1000, thin=30,
                   chain=m.initial_chain(), sweep_fn=lambda c, r: sir_mh_baseline_sweep(c, m, r),
                   keep_paths=False)
    ks = {p: stats.ks_2samp(unif.trace.column(p), mh.trace.column(p)).statistic for p in m.param_names}
    report("C7c", max(ks.values()) < 0.05,
           f"KS beta {ks['beta']:.4f}, gamma {ks['gamma']:.4f} (< 0.05) on {n} thinned draws each")


# -- C8: predator-prey bridge sampler ---------------------------------------

def _persistent_lv_dataset(N, theta, rng):
    """Uniform initial state and path, redrawn until neither species dies out.

    Returns the model, the path and the number of rejected draws.
    """
    rejected = 0
    while True:
        m = LotkaVolterraModel(N, theta, 20.0, LotkaVolterraModel.random_initial_state(N, rng))
        truth = m.simulate(m.params, rng)
        if np.all(truth.states > 0):
            return m, truth, rejected
        rejected += 1


def test_c8_lotka_volterra_bridge(report):
    N = 60
    theta = np.array([0.125, 0.005, 0.005, 0.1])
    cfg = SamplerConfig("nonstationary", Psi.preset("half-exit"), split=SplitScheme("bridge", 30))
    cover = np.zeros(4, dtype=int)
    violations = pinned = rejected = 0

    for r in range(20):
        rng = RandomSource([108, r])
        m, truth, extinct = _persistent_lv_dataset(N, theta, rng)
        rejected += extinct
        obs = [m.equally_spaced_observations(truth, 100, N / 25, rng)]

        def sweep(chain, rng_):
            nonlocal violations, pinned
            new = gibbs_sweep(chain, m, cfg, obs, rng_)
            for t, x in zip(new.stats["split_times"], new.stats["split_states"]):
                pinned += 1
                violations += not np.array_equal(state_at(new.path, t), x)
            return new

        res = run_chain(m, cfg, obs, 6000, RandomSource([108, 100 + r]), burn_in=1000, sweep_fn=sweep,
                        keep_paths=False)
        for k, name in enumerate(m.param_names):
            lo, hi = central_interval(res.trace.column(name))
            cover[k] += lo <= theta[k] <= hi
    ok = violations == 0 and pinned > 0 and bool(np.all(cover >= 17))
    report("C8", ok, f"{violations} bridge violations over {pinned} pinned epochs; coverage "
           + ", ".join(f"{n} {c}/20" for n, c in zip(LotkaVolterraModel.param_names, cover))
           + f" (>= 17); {rejected} extinct datasets redrawn")


# -- C9: joint-distribution audit -------------------------------------------

def test_c9_geweke_audit_and_mutation(report):
    clean = geweke_suite(RandomSource(109), n_forward=10_000, n_gibbs=10_000)
    mutated = geweke_suite(RandomSource([109, 1]), n_forward=10_000, n_gibbs=10_000, weight_offset=-1)
    zc = np.abs(clean.details["z_scores"])
    zm = np.abs(mutated.details["z_scores"])
    ok = clean.passed and zm.max() > 5
    report("C9", ok, f"clean |z| = {np.round(zc, 2).tolist()} (< 3); mutated max |z| = {zm.max():.1f} (> 5)")
