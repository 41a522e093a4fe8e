"""State spaces, time-dependent rate kernels and piecewise-constant trajectories.

Population kernels are written as a set of reaction channels.  Channel ``j``
moves the state by a fixed stoichiometry vector ``nu_j`` at rate

    theta_j * h_j(x) * r_j(t)

where ``theta_j`` is a free rate constant, ``h_j`` a structural factor of the
state (``x``, ``s*i``, an indicator, ...) and ``r_j`` a positive seasonal
modulation.  Only the nonnegative exit rate ``sum_j theta_j h_j(x) r_j(t)`` is
stored; the signed diagonal of the intensity matrix is never materialized.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "StateSpace",
    "Seasonality",
    "ConstantSeasonality",
    "CosineSeasonality",
    "FunctionSeasonality",
    "RateKernel",
    "InitialDistribution",
    "Trajectory",
    "AugmentedTrajectory",
    "state_at",
    "strip_virtual",
    "embed",
    "trajectory_log_density",
]


class StateSpace:
    """Integer box ``lower <= x <= upper`` in ``d`` dimensions.

    ``upper`` entries may be ``None`` for an unbounded coordinate.  Bounded
    spaces get a row-major dense encoding used by the filtering engine.
    """

    def __init__(self, lower: Sequence[int], upper: Sequence[int | None]):
        lower = tuple(int(v) for v in lower)
        upper = tuple(None if v is None else int(v) for v in upper)
        if len(lower) != len(upper) or not lower:
            raise ValueError("lower and upper must have the same positive length")
        for lo, hi in zip(lower, upper):
            if hi is not None and hi < lo:
                raise ValueError(f"empty coordinate range [{lo}, {hi}]")
        self.lower = lower
        self.upper = upper

    def __repr__(self):
        return f"StateSpace(lower={self.lower}, upper={self.upper})"

    def __eq__(self, other):
        return (isinstance(other, StateSpace) and self.lower == other.lower
                and self.upper == other.upper)

    def __hash__(self):
        return hash((self.lower, self.upper))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def bounded(self) -> bool:
        return all(u is not None for u in self.upper)

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=np.int64)

    @property
    def upper_array(self) -> np.ndarray:
        """Upper bounds; unbounded coordinates map to a large sentinel."""
        big = np.iinfo(np.int64).max // 4
        return np.asarray([big if u is None else u for u in self.upper], dtype=np.int64)

    @property
    def shape(self) -> tuple[int, ...]:
        self._require_bounded()
        return tuple(hi - lo + 1 for lo, hi in zip(self.lower, self.upper))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def _require_bounded(self):
        if not self.bounded:
            raise ValueError("operation requires a bounded state space")

    def contains(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        return np.all((states >= self.lower_array) & (states <= self.upper_array), axis=1)

    def encode(self, states) -> np.ndarray:
        """Dense row-major indices of ``states`` (shape ``(n, d)``)."""
        self._require_bounded()
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        if not np.all(self.contains(states)):
            raise ValueError("state outside the space")
        return np.ravel_multi_index(tuple((states - self.lower_array).T), self.shape)

    def decode(self, index) -> np.ndarray:
        self._require_bounded()
        index = np.atleast_1d(np.asarray(index, dtype=np.int64))
        coords = np.unravel_index(index, self.shape)
        return np.stack(coords, axis=1) + self.lower_array

    def all_states(self) -> np.ndarray:
        return self.decode(np.arange(self.size))


class Seasonality:
    """Positive bounded time modulation ``r(t)`` with its integral."""

    lower: float = 1.0
    upper: float = 1.0
    homogeneous: bool = False

    def value(self, t):
        raise NotImplementedError

    def integral(self, a, b):
        raise NotImplementedError


class ConstantSeasonality(Seasonality):
    homogeneous = True

    def value(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def integral(self, a, b):
        return np.asarray(b, dtype=float) - np.asarray(a, dtype=float)


class CosineSeasonality(Seasonality):
    """``r(t) = 3/2 + cos(2 pi t / period) / 2``, taking values in ``[1, 2]``."""

    lower = 1.0
    upper = 2.0

    def __init__(self, period: float):
        if period <= 0:
            raise ValueError("period must be positive")
        self.period = float(period)

    def __repr__(self):
        return f"CosineSeasonality(period={self.period})"

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return 1.5 + 0.5 * np.cos(2.0 * np.pi * t / self.period)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        w = 2.0 * np.pi / self.period
        return 1.5 * t + 0.5 * np.sin(w * t) / w

    def integral(self, a, b):
        return self.antiderivative(b) - self.antiderivative(a)


class FunctionSeasonality(Seasonality):
    """Arbitrary modulation; integrals fall back to adaptive quadrature."""

    def __init__(self, func: Callable[[float], float], lower: float, upper: float,
                 antiderivative: Callable | None = None):
        if not 0 < lower <= upper:
            raise ValueError("need 0 < lower <= upper")
        self.func = func
        self.lower = float(lower)
        self.upper = float(upper)
        self._antiderivative = antiderivative

    def value(self, t):
        return np.vectorize(self.func, otypes=[float])(t)

    def integral(self, a, b):
        if self._antiderivative is not None:
            F = np.vectorize(self._antiderivative, otypes=[float])
            return F(b) - F(a)
        a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
        out = np.empty(a.shape)
        for k, (lo, hi) in enumerate(zip(a.ravel(), b.ravel())):
            out.flat[k] = integrate.quad(self.func, lo, hi, epsabs=1e-9, epsrel=1e-10)[0] if hi > lo else 0.0
        return out


_CONSTANT = ConstantSeasonality()


class RateKernel:
    """Sparse time-dependent intensity built from reaction channels.

    Parameters
    ----------
    space : StateSpace
    stoichiometry : array (J, d)
        Jump vector of each channel.
    rates : array (J,)
        Rate constants ``theta``.
    structure : callable
        Maps an ``(n, d)`` integer state array to the ``(n, J)`` array of
        structural factors ``h_j(x)``; must vanish where a jump would leave
        the space.
    seasonality : sequence of Seasonality or None
        Per-channel modulation; ``None`` entries mean ``r == 1``.
    names : sequence of str, optional
    """

    def __init__(self, space: StateSpace, stoichiometry, rates, structure: Callable,
                 seasonality: Sequence[Seasonality | None] | None = None,
                 names: Sequence[str] | None = None):
        self.space = space
        self.stoichiometry = np.atleast_2d(np.asarray(stoichiometry, dtype=np.int64))
        self.rates = np.asarray(rates, dtype=float).copy()
        self.rates.setflags(write=False)
        J, d = self.stoichiometry.shape
        if d != space.dimension:
            raise ValueError("stoichiometry dimension does not match the space")
        if self.rates.shape != (J,):
            raise ValueError("need one rate per channel")
        if np.any(~np.isfinite(self.rates)) or np.any(self.rates < 0):
            raise ValueError("rates must be finite and nonnegative")
        if np.any(np.all(self.stoichiometry == 0, axis=1)):
            raise ValueError("a channel with zero jump is a self-transition")
        self.structure = structure
        if seasonality is None:
            seasonality = [None] * J
        self.seasonality = tuple(_CONSTANT if s is None else s for s in seasonality)
        if len(self.seasonality) != J:
            raise ValueError("need one seasonality entry per channel")
        self.names = tuple(names) if names is not None else tuple(f"r{j}" for j in range(J))

    def __repr__(self):
        return f"RateKernel(channels={self.names}, rates={self.rates.tolist()})"

    @property
    def n_channels(self) -> int:
        return self.stoichiometry.shape[0]

    @property
    def dimension(self) -> int:
        return self.space.dimension

    @property
    def homogeneous(self) -> bool:
        return all(s.homogeneous for s in self.seasonality)

    @property
    def max_step(self) -> np.ndarray:
        """Largest per-coordinate jump magnitude over channels."""
        return np.abs(self.stoichiometry).max(axis=0)

    def with_rates(self, rates) -> "RateKernel":
        new = RateKernel(self.space, self.stoichiometry, rates, self.structure,
                         self.seasonality, self.names)
        if "structure_table" in self.__dict__:
            new.__dict__["structure_table"] = self.structure_table
        return new

    # -- vectorized evaluation ------------------------------------------------
    def structural(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        return np.asarray(self.structure(states), dtype=float).reshape(len(states), self.n_channels)

    def season_values(self, t) -> np.ndarray:
        """``r_j(t)`` as an array of shape ``t.shape + (J,)``."""
        t = np.asarray(t, dtype=float)
        return np.stack([s.value(t) for s in self.seasonality], axis=-1)

    def season_integrals(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return np.stack([np.broadcast_to(s.integral(a, b), np.broadcast(a, b).shape)
                         for s in self.seasonality], axis=-1)

    def propensities(self, states, t) -> np.ndarray:
        """Channel rates ``theta_j h_j(x_k) r_j(t_k)``, shape ``(n, J)``."""
        h = self.structural(states)
        return h * self.rates * self.season_values(np.broadcast_to(t, (len(h),)))

    def exit_rates(self, states, t) -> np.ndarray:
        return self.propensities(states, t).sum(axis=1)

    def exit_integrals(self, states, a, b) -> np.ndarray:
        h = self.structural(states)
        n = len(h)
        dR = self.season_integrals(np.broadcast_to(a, (n,)), np.broadcast_to(b, (n,)))
        return (h * self.rates * dR).sum(axis=1)

    def exit_bounds(self, states) -> tuple[np.ndarray, np.ndarray]:
        """Per-state ``(sup_t, inf_t)`` of the exit rate."""
        hr = self.structural(states) * self.rates
        up = np.array([s.upper for s in self.seasonality])
        lo = np.array([s.lower for s in self.seasonality])
        return hr @ up, hr @ lo

    def channel_of(self, diffs) -> np.ndarray:
        """Channel index of each jump vector in ``diffs`` (``-1`` if none)."""
        diffs = np.atleast_2d(np.asarray(diffs, dtype=np.int64))
        match = np.all(diffs[:, None, :] == self.stoichiometry[None, :, :], axis=2)
        out = np.where(match.any(axis=1), match.argmax(axis=1), -1)
        return out

    @cached_property
    def structure_table(self) -> np.ndarray:
        """Dense ``(size, J)`` table of structural factors on a bounded space."""
        table = self.structural(self.space.all_states())
        table.setflags(write=False)
        return table

    def sup_exit_rate(self) -> float:
        """``max_x sup_t`` exit rate over the bounded space."""
        up = np.array([s.upper for s in self.seasonality])
        return float(np.max(self.structure_table @ (self.rates * up)))

    # -- scalar interface -----------------------------------------------------
    def neighbors(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        h = self.structural(x[None, :])[0]
        return [x + self.stoichiometry[j] for j in range(self.n_channels)
                if h[j] * self.rates[j] > 0]

    def off_rate(self, x, x2, t) -> float:
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        x2 = np.asarray(x2, dtype=np.int64).reshape(-1)
        j = self.channel_of(x2 - x)[0]
        if j < 0:
            return 0.0
        return float(self.propensities(x[None, :], t)[0, j])

    def exit_rate(self, x, t) -> float:
        return float(self.exit_rates(np.asarray(x).reshape(1, -1), t)[0])

    def exit_integral(self, x, a, b) -> float:
        return float(self.exit_integrals(np.asarray(x).reshape(1, -1), a, b)[0])

    # -- constructors ---------------------------------------------------------
    @classmethod
    def from_matrix(cls, Q) -> "RateKernel":
        """Homogeneous kernel on ``{0, ..., K-1}`` from a generator matrix."""
        Q = np.asarray(Q, dtype=float)
        K = Q.shape[0]
        if Q.shape != (K, K):
            raise ValueError("Q must be square")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        src, dst = np.nonzero(off)
        shifts = np.unique(dst - src)
        if len(shifts) == 0:
            shifts = np.array([1])
        table = np.zeros((K, len(shifts)))
        for j, s in enumerate(shifts):
            idx = np.arange(K)
            ok = (idx + s >= 0) & (idx + s < K)
            table[idx[ok], j] = off[idx[ok], idx[ok] + s]

        def structure(states):
            return table[states[:, 0]]

        kernel = cls(StateSpace([0], [K - 1]), shifts.reshape(-1, 1), np.ones(len(shifts)),
                     structure, names=[f"shift{s:+d}" for s in shifts])
        kernel._matrix = Q.copy()
        return kernel

    def generator_matrix(self, t: float = 0.0) -> np.ndarray:
        """Dense intensity matrix (signed diagonal) on a bounded space."""
        states = self.space.all_states()
        n = len(states)
        Q = np.zeros((n, n))
        props = self.propensities(states, t)
        for j in range(self.n_channels):
            dest = states + self.stoichiometry[j]
            ok = self.space.contains(dest) & (props[:, j] > 0)
            rows = np.nonzero(ok)[0]
            Q[rows, self.space.encode(dest[ok])] += props[ok, j]
        Q[np.arange(n), np.arange(n)] = -Q.sum(axis=1)
        return Q


class InitialDistribution:
    """Finite-support distribution over starting states."""

    def __init__(self, states, probs=None):
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        if probs is None:
            probs = np.full(len(states), 1.0 / len(states))
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(states),):
            raise ValueError("need one probability per state")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("masses must be nonnegative and sum to one")
        keep = probs > 0
        self.states = states[keep]
        self.probs = probs[keep]
        self._origin = self.states.min(axis=0)
        self._shape = tuple(self.states.max(axis=0) - self._origin + 1)
        self._table = np.zeros(self._shape)
        self._table[tuple((self.states - self._origin).T)] = self.probs

    @classmethod
    def point(cls, x) -> "InitialDistribution":
        return cls(np.asarray(x, dtype=np.int64).reshape(1, -1), [1.0])

    @classmethod
    def uniform_box(cls, lower, upper) -> "InitialDistribution":
        space = StateSpace(lower, upper)
        return cls(space.all_states())

    def __repr__(self):
        return f"InitialDistribution(n_states={len(self.states)})"

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def log_prob(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64)) - self._origin
        inside = np.all((states >= 0) & (states < np.asarray(self._shape)), axis=1)
        p = np.zeros(len(states))
        p[inside] = self._table[tuple(states[inside].T)]
        with np.errstate(divide="ignore"):
            return np.log(p)

    def sample(self, rng) -> np.ndarray:
        return self.states[rng.choice(len(self.probs), p=self.probs)].copy()


def _as_states(states) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    if states.ndim == 1:
        states = states[:, None]
    return states


@dataclass(frozen=True)
class AugmentedTrajectory:
    """Jump epochs with self-transitions allowed.

    ``tags`` carries observation identities on epochs (``-1`` = untagged);
    epochs pinned to jump observations are matched by tag, never by time.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float
    tags: np.ndarray = field(default=None)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = _as_states(self.states)
        tags = (np.full(len(times), -1, dtype=np.int64) if self.tags is None
                else np.asarray(self.tags, dtype=np.int64))
        for arr in (times, states, tags):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "horizon", float(self.horizon))
        self._check()

    def _check(self):
        t = self.times
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("times must be a nonempty vector")
        if len(self.states) != len(t) or len(self.tags) != len(t):
            raise ValueError("times, states and tags must have equal length")
        if t[0] != 0.0:
            raise ValueError("first epoch must be at time 0")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if t[-1] > self.horizon:
            raise ValueError("epoch beyond horizon")

    @property
    def n_epochs(self) -> int:
        return len(self.times)

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def virtual_mask(self) -> np.ndarray:
        """True at epochs ``i >= 1`` that are self-transitions."""
        mask = np.zeros(len(self.times), dtype=bool)
        mask[1:] = np.all(self.states[1:] == self.states[:-1], axis=1)
        return mask


@dataclass(frozen=True)
class Trajectory(AugmentedTrajectory):
    """Piecewise-constant right-continuous path without self-transitions."""

    def _check(self):
        super()._check()
        if np.any(self.virtual_mask()):
            raise ValueError("trajectory contains self-transitions")

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    def holding_times(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.horizon))

    def state_at(self, t):
        return state_at(self, t)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time"] + [f"coord_{c}" for c in range(self.dimension)])
        for ti, xi in zip(self.times, self.states):
            writer.writerow([repr(float(ti))] + [int(v) for v in xi])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, horizon: float) -> "Trajectory":
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[0] != "time" or not all(h == f"coord_{c}" for c, h in enumerate(header[1:])):
            raise ValueError("trajectory CSV header must be time,coord_0,...")
        times = np.array([float(r[0]) for r in body])
        states = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.int64)
        return cls(times, states, horizon)


def _unchecked(cls, times, states, horizon, tags):
    obj = object.__new__(cls)
    object.__setattr__(obj, "times", times)
    object.__setattr__(obj, "states", states)
    object.__setattr__(obj, "horizon", float(horizon))
    object.__setattr__(obj, "tags", tags)
    return obj


def state_at(traj: AugmentedTrajectory, t: float) -> np.ndarray:
    """State occupied at time ``t`` (right-continuous)."""
    if not 0.0 <= t <= traj.horizon:
        raise ValueError(f"time {t} outside [0, {traj.horizon}]")
    i = np.searchsorted(traj.times, t, side="right") - 1
    return traj.states[i].copy()


def strip_virtual(aug: AugmentedTrajectory) -> Trajectory:
    """Drop self-transitions, keeping epoch 0 and every real jump."""
    keep = ~aug.virtual_mask()
    return _unchecked(Trajectory, aug.times[keep], aug.states[keep], aug.horizon, aug.tags[keep])


def embed(traj: Trajectory) -> AugmentedTrajectory:
    return _unchecked(AugmentedTrajectory, traj.times, traj.states, traj.horizon, traj.tags)


def trajectory_log_density(traj: AugmentedTrajectory, kernel: RateKernel,
                           init: InitialDistribution) -> float:
    """Log path density under ``kernel``; self-transitions contribute nothing.

    Returns ``-inf`` for paths using a zero-rate transition.
    """
    t = traj.times
    x = traj.states
    lp = float(init.log_prob(x[:1])[0])
    ends = np.append(t[1:], traj.horizon)
    lp -= float(kernel.exit_integrals(x, t, ends).sum())
    jumps = ~np.all(x[1:] == x[:-1], axis=1)
    if np.any(jumps):
        src = x[:-1][jumps]
        j = kernel.channel_of(x[1:][jumps] - src)
        if np.any(j < 0):
            return -math.inf
        props = kernel.propensities(src, t[1:][jumps])
        rates = props[np.arange(len(j)), j]
        if np.any(rates <= 0):
            return -math.inf
        lp += float(np.log(rates).sum())
    return lp
