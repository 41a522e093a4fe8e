"""Exact forward simulation and a transition-probability oracle.

Both simulators advance a batch of independent replicates in lockstep: every
iteration proposes one candidate epoch per live replicate, so the Python loop
runs over epochs rather than over replicates.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from .core import AugmentedTrajectory, InitialDistribution, RateKernel, Trajectory, _unchecked

__all__ = [
    "RandomSource",
    "InvariantViolation",
    "gillespie",
    "gillespie_batch",
    "simulate_uniformized",
    "simulate_uniformized_batch",
    "transition_probability_oracle",
]


class InvariantViolation(RuntimeError):
    """A dominating rate turned out to be smaller than a realized exit rate."""


def RandomSource(seed=None) -> np.random.Generator:
    """PCG64 generator for ``seed``.

    Independent streams for parallel chains come from
    ``np.random.SeedSequence(seed).spawn(n)``; see :func:`split_streams`.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def split_streams(seed, n: int) -> list[np.random.Generator]:
    """``n`` statistically independent generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _initial_states(init: InitialDistribution, n: int, rng) -> np.ndarray:
    idx = rng.choice(len(init.probs), size=n, p=init.probs)
    return init.states[idx].copy()


def _pick_channels(props: np.ndarray, total: np.ndarray, rng) -> np.ndarray:
    """Draw one channel per row with probability ``props / total``."""
    cum = np.cumsum(props, axis=1)
    u = rng.random(len(props)) * total
    ch = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(ch, props.shape[1] - 1)


def _lockstep(kernel: RateKernel, x0: np.ndarray, T: float, rng, omega: float | None,
              record: bool):
    """Shared batch loop.

    With ``omega=None`` candidates arrive at the local bound ``B(x)`` and
    rejected candidates are discarded (thinning).  With a number, candidates
    arrive at rate ``omega`` and rejections are kept as self-transitions.
    """
    n, d = x0.shape
    x = x0.copy()
    t = np.zeros(n)
    live = np.ones(n, dtype=bool)
    rows, times, states = [], [], []
    up = np.array([s.upper for s in kernel.seasonality])
    while live.any():
        idx = np.nonzero(live)[0]
        xs = x[idx]
        if omega is None:
            bound = kernel.structural(xs) * kernel.rates @ up
        else:
            bound = np.full(len(idx), float(omega))
        dead = bound <= 0
        dt = rng.exponential(size=len(idx)) / np.where(dead, 1.0, bound)
        tn = t[idx] + dt
        done = dead | (tn > T)
        live[idx[done]] = False
        keep = ~done
        idx, xs, tn, bound = idx[keep], xs[keep], tn[keep], bound[keep]
        if len(idx) == 0:
            break
        t[idx] = tn
        props = kernel.propensities(xs, tn)
        total = props.sum(axis=1)
        if np.any(total > bound * (1 + 1e-12)):
            raise InvariantViolation("dominating rate below a realized exit rate")
        jump = rng.random(len(idx)) * bound < total
        if omega is None:
            idx, xs, tn, props, total = idx[jump], xs[jump], tn[jump], props[jump], total[jump]
            if len(idx) == 0:
                continue
            ch = _pick_channels(props, total, rng)
            x[idx] = xs + kernel.stoichiometry[ch]
        else:
            jx = np.nonzero(jump)[0]
            if len(jx):
                ch = _pick_channels(props[jx], total[jx], rng)
                x[idx[jx]] = xs[jx] + kernel.stoichiometry[ch]
        if record:
            rows.append(idx)
            times.append(tn)
            states.append(x[idx].copy())
    return x, rows, times, states


def _assemble(cls, x0, T, rows, times, states):
    n, d = x0.shape
    if rows:
        r = np.concatenate(rows)
        tt = np.concatenate(times)
        ss = np.concatenate(states)
        order = np.lexsort((tt, r))
        r, tt, ss = r[order], tt[order], ss[order]
        bounds = np.searchsorted(r, np.arange(n + 1))
    else:
        r = np.zeros(0, dtype=np.int64)
        tt = np.zeros(0)
        ss = np.zeros((0, d), dtype=np.int64)
        bounds = np.zeros(n + 1, dtype=np.int64)
    out = []
    for k in range(n):
        lo, hi = bounds[k], bounds[k + 1]
        ti = np.concatenate(([0.0], tt[lo:hi]))
        xi = np.concatenate((x0[k:k + 1], ss[lo:hi]))
        out.append(_unchecked(cls, ti, xi, T, np.full(len(ti), -1, dtype=np.int64)))
    return out


def gillespie_batch(kernel: RateKernel, init: InitialDistribution, T: float, n: int, rng,
                    record: bool = True):
    """``n`` independent exact draws on ``[0, T]`` by thinning.

    Returns a list of :class:`Trajectory` or, with ``record=False``, only the
    ``(n, d)`` array of terminal states.
    """
    x0 = _initial_states(init, n, rng)
    xT, rows, times, states = _lockstep(kernel, x0, float(T), rng, None, record)
    if not record:
        return xT
    return _assemble(Trajectory, x0, float(T), rows, times, states)


def gillespie(kernel: RateKernel, init: InitialDistribution, T: float, rng) -> Trajectory:
    """One exact draw from the jump-process law on ``[0, T]``."""
    return gillespie_batch(kernel, init, T, 1, rng)[0]


def simulate_uniformized_batch(kernel: RateKernel, omega: float, init: InitialDistribution,
                               T: float, n: int, rng, record: bool = True):
    x0 = _initial_states(init, n, rng)
    xT, rows, times, states = _lockstep(kernel, x0, float(T), rng, float(omega), record)
    if not record:
        return xT
    return _assemble(AugmentedTrajectory, x0, float(T), rows, times, states)


def simulate_uniformized(kernel: RateKernel, omega: float, init: InitialDistribution, T: float,
                         rng) -> AugmentedTrajectory:
    """Poisson(``omega``) epochs driving the chain ``I + Q(t)/omega``."""
    return simulate_uniformized_batch(kernel, omega, init, T, 1, rng)[0]


def series_truncation(rate: float, tail: float = 1e-12, cap: int = 10**6) -> int:
    """Smallest ``K`` with ``P(Poisson(rate) > K) < tail``, capped."""
    if rate <= 0:
        return 0
    k = int(stats.poisson.isf(tail, rate))
    while stats.poisson.sf(k, rate) >= tail and k < cap:
        k += 1
    return min(k, cap)


def transition_probability_oracle(kernel: RateKernel, omega: float, x, x2, s: float,
                                  K: int | None = None) -> float:
    """``P(X_s = x2 | X_0 = x)`` for a homogeneous kernel via the uniformized series."""
    if not kernel.homogeneous:
        raise ValueError("oracle requires a time-homogeneous kernel")
    if not kernel.space.bounded:
        raise NotImplementedError("oracle requires a bounded state space")
    Q = kernel.generator_matrix()
    exit_max = float(np.max(-np.diag(Q)))
    if omega < exit_max:
        raise InvariantViolation("omega below the largest exit rate")
    i = int(kernel.space.encode(np.atleast_2d(x))[0])
    j = int(kernel.space.encode(np.atleast_2d(x2))[0])
    if s == 0:
        return float(i == j)
    if K is None:
        K = series_truncation(s * omega)
    P = np.eye(len(Q)) + Q / omega
    pmf = stats.poisson.pmf(np.arange(K + 1), s * omega)
    v = np.zeros(len(Q))
    v[i] = 1.0
    total = 0.0
    for k in range(K + 1):
        total += pmf[k] * v[j]
        v = v @ P
    return float(total)
