"""Exactness suites shared by the command line and the test suite.

Each suite returns a :class:`SuiteResult` with a pass flag and the numbers
behind it.  Sizes default to desk scale; the acceptance tests call the same
functions with larger budgets.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import InitialDistribution, RateKernel
from .diagnostics import geweke_test, lemma1_check
from .ffbs import EpochStep, InfeasibleError, backward_sample, enumerate_joint, forward_filter
from .models import BirthDeathModel, GammaPrior, ObservationSet
from .samplers import SamplerConfig
from .simulate import simulate_uniformized_batch, transition_probability_oracle

__all__ = ["SuiteResult", "SUITES", "prop1_suite", "lemma1_suite", "ffbs_suite", "geweke_suite",
           "random_ffbs_instance", "run_suite", "format_details", "ffbs_tv"]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}"


THREE_STATE_Q = np.array([[-1.0, 0.6, 0.4],
                          [0.5, -1.5, 1.0],
                          [0.3, 0.7, -1.0]])


def prop1_suite(rng, n: int = 20000, tol: float = 0.02, s: float = 1.0, omega: float = 2.0,
                Q=THREE_STATE_Q) -> SuiteResult:
    """Uniformized simulation of a small homogeneous chain against the series oracle."""
    start = time.perf_counter()
    kernel = RateKernel.from_matrix(Q)
    K = len(Q)
    worst = 0.0
    table = np.zeros((K, K))
    for i in range(K):
        xs = simulate_uniformized_batch(kernel, omega, InitialDistribution.point([i]), s, n, rng,
                                        record=False)[:, 0]
        freq = np.bincount(xs, minlength=K) / n
        exact = np.array([transition_probability_oracle(kernel, omega, [i], [j], s) for j in range(K)])
        table[i] = freq - exact
        worst = max(worst, float(np.abs(freq - exact).max()))
    return SuiteResult("prop1", worst < tol, {"max_abs_deviation": worst, "tolerance": tol, "draws": n},
                       time.perf_counter() - start)


def lemma1_suite(rng, n: int = 100000, a: float = -1.0, b: float = 1.0, c: float = 2.0,
                 kappas=(10, 100, 1000, 10000), z_max: float = 4.0) -> SuiteResult:
    start = time.perf_counter()
    rep = lemma1_check(a, b, c, kappas, n, rng)
    return SuiteResult("lemma1", rep.passed(z_max),
                       {"z_scores": rep.z_scores, "mean_square_errors": rep.mean_square_errors,
                        "monotone": rep.monotone, "target": rep.target},
                       time.perf_counter() - start)


def random_ffbs_instance(rng, max_states: int = 4, max_epochs: int = 6, max_outcomes: int | None = None,
                         n_values: int = 6):
    """Random weighted chain with at most ``max_states`` support states per epoch.

    Supports are random subsets of ``{0..n_values-1}``; transitions are
    sparse nonnegative matrices, some epochs are locked and some weights are
    zero.  Instances are redrawn until feasible and, with ``max_outcomes``,
    until the number of positive-probability sequences is within bound.
    """
    while True:
        m = int(rng.integers(1, max_epochs + 1))
        steps = []
        for i in range(m):
            k = int(rng.integers(1, max_states + 1))
            support = np.sort(rng.choice(n_values, size=k, replace=False)).reshape(-1, 1)
            lw = rng.normal(size=k)
            lw[rng.random(k) < 0.15] = -np.inf
            if i == 0:
                steps.append(EpochStep(support, lw))
                continue
            if rng.random() < 0.2:
                steps.append(EpochStep(support, lw, locked=True))
                continue
            prev = len(steps[-1].support)
            mat = rng.exponential(size=(prev, k)) * (rng.random((prev, k)) < 0.7)
            steps.append(EpochStep(support, lw, mat))
        probs = rng.dirichlet(np.ones(n_values))
        init = InitialDistribution(np.arange(n_values).reshape(-1, 1), probs)
        try:
            seqs, p = enumerate_joint(steps, init)
        except InfeasibleError:
            continue
        if max_outcomes is not None and len(p) > max_outcomes:
            continue
        return steps, init, seqs, p


def _sequence_codes(seqs, radix):
    code = np.zeros(len(seqs), dtype=np.int64)
    for i in range(seqs.shape[1]):
        code = code * radix + seqs[:, i]
    return code


def ffbs_tv(steps, init, seqs, probs, n: int, rng) -> float:
    """Total variation between ``n`` FFBS draws and the enumerated law."""
    filt = forward_filter(steps, init)
    draws = backward_sample(filt, steps, rng, size=n, indices=True)
    radix = max(len(s.support) for s in steps)
    exact = dict(zip(_sequence_codes(seqs, radix).tolist(), probs))
    codes, counts = np.unique(_sequence_codes(draws, radix), return_counts=True)
    emp = dict(zip(codes.tolist(), counts / n))
    keys = set(exact) | set(emp)
    return 0.5 * sum(abs(exact.get(k, 0.0) - emp.get(k, 0.0)) for k in keys)


def ffbs_suite(rng, n_instances: int = 20, n_draws: int = 100000, tol: float = 0.01,
               max_outcomes: int = 24) -> SuiteResult:
    """Reference FFBS against brute-force enumeration on random small chains."""
    start = time.perf_counter()
    tvs = []
    for _ in range(n_instances):
        steps, init, seqs, p = random_ffbs_instance(rng, max_outcomes=max_outcomes)
        tvs.append(ffbs_tv(steps, init, seqs, p, n_draws, rng))
    tvs = np.array(tvs)
    return SuiteResult("ffbs", bool(tvs.max() < tol),
                       {"max_tv": float(tvs.max()), "mean_tv": float(tvs.mean()), "instances": n_instances,
                        "draws": n_draws, "tolerance": tol}, time.perf_counter() - start)


def geweke_model(capacity: int = 10, horizon: float = 10.0) -> BirthDeathModel:
    """Birth-death audit model with an informative prior on the death rate."""
    return BirthDeathModel(capacity, 3.0, 0.3, horizon, seasonal=False, prior_mu=GammaPrior(30.0, 100.0))


def geweke_suite(rng, n_forward: int = 2000, n_gibbs: int = 2000, variant: str = "naive",
                 weight_offset: int = 0, threshold: float = 3.0, n_obs: int = 5,
                 sigma: float = 1.0) -> SuiteResult:
    """Marginal-conditional against successive-conditional simulation on birth-death."""
    start = time.perf_counter()
    model = geweke_model()
    times = model.horizon * np.arange(1, n_obs + 1) / (n_obs + 1)
    obs = [ObservationSet("noisy", times, np.zeros((n_obs, 1)), sigma)]
    config = SamplerConfig(variant, weight_offset=weight_offset)
    rep = geweke_test(model, config, n_forward, n_gibbs, rng, obs)
    return SuiteResult("geweke", rep.passed(threshold),
                       {"names": rep.names, "z_scores": rep.z_scores, "forward_means": rep.forward_means,
                        "gibbs_means": rep.gibbs_means, "threshold": threshold},
                       time.perf_counter() - start)


SUITES = {
    "prop1": prop1_suite,
    "lemma1": lemma1_suite,
    "ffbs": ffbs_suite,
    "geweke": geweke_suite,
}


def run_suite(name: str, rng) -> SuiteResult:
    try:
        fn = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
    return fn(rng)


def format_details(result: SuiteResult) -> str:
    lines = [result.line()]
    for k, v in result.details.items():
        if isinstance(v, np.ndarray):
            v = " ".join(f"{float(x):.4g}" for x in v.ravel())
        elif isinstance(v, float):
            v = f"{v:.6g}" if math.isfinite(v) else str(v)
        lines.append(f"  {k}: {v}")
    lines.append(f"  seconds: {result.seconds:.3f}")
    return "\n".join(lines)
