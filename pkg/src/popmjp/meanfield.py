"""Deterministic mean dynamics and their least-squares calibration.

Integration is classical fixed-step RK4 over a batch of parameter vectors,
so a calibration grid is integrated in one pass.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = ["OdeSystem", "MeanPath", "CalibrationResult", "integrate", "integrate_batch",
           "calibrate", "birth_death_system", "sir_system", "lotka_volterra_system"]


@dataclass(frozen=True)
class OdeSystem:
    """``d xi / dt = rhs(t, xi, params)`` evaluated on batches.

    ``rhs`` receives ``xi`` of shape ``(B, d)`` and ``params`` of shape
    ``(B, p)`` and returns ``(B, d)``.
    """

    rhs: Callable
    dimension: int
    param_names: tuple
    name: str = ""

    def param_index(self, name: str) -> int:
        return self.param_names.index(name)


@dataclass
class MeanPath:
    """Mean path on a uniform time grid with linear interpolation."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.times), -1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mean path has non-finite values")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t) -> np.ndarray:
        """Interpolated values at ``t``, shape ``(len(t), d)``; clamped outside the grid."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.times, v) for v in self.values.T], axis=1)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"xi_{c}" for c in range(self.values.shape[1])])
        for t, row in zip(self.times, self.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def integrate_batch(system: OdeSystem, xi0, T: float, n_steps: int, params, t0: float = 0.0):
    """RK4 over ``n_steps`` uniform steps; returns ``(times, values (n+1, B, d))``."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    B = params.shape[0]
    xi = np.broadcast_to(np.asarray(xi0, dtype=float), (B, system.dimension)).copy()
    h = T / n_steps
    out = np.empty((n_steps + 1, B, system.dimension))
    out[0] = xi
    f = system.rhs
    t = t0
    for k in range(n_steps):
        k1 = f(t, xi, params)
        k2 = f(t + h / 2, xi + h / 2 * k1, params)
        k3 = f(t + h / 2, xi + h / 2 * k2, params)
        k4 = f(t + h, xi + h * k3, params)
        xi = xi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (k + 1) * h
        out[k + 1] = xi
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state during integration")
    return t0 + h * np.arange(n_steps + 1), out


def integrate(system: OdeSystem, xi0, T: float, step: float | None = None, params=(),
              t0: float = 0.0) -> MeanPath:
    """Integrate one parameter vector on ``[t0, t0 + T]``; default step ``T / 1e4``."""
    if step is None:
        step = T / 1e4
    if not step > 0:
        raise ValueError("step must be positive")
    n = max(1, int(math.ceil(T / step - 1e-9)))
    times, vals = integrate_batch(system, xi0, T, n, np.asarray(params, dtype=float).reshape(1, -1), t0)
    return MeanPath(times, vals[:, 0, :])


def _interp_uniform(times, vals, query):
    """Linear interpolation on a uniform grid; ``vals`` is ``(n, B, k)``, ``query`` ``(B, q)``."""
    h = times[1] - times[0]
    pos = np.clip((query - times[0]) / h, 0.0, len(times) - 1.0)
    i = np.minimum(pos.astype(np.int64), len(times) - 2)
    frac = (pos - i)[..., None]
    b = np.arange(vals.shape[1])[:, None]
    return vals[i, b] * (1 - frac) + vals[i + 1, b] * frac


@dataclass
class CalibrationResult:
    params: dict
    objective: float
    history: list = field(default_factory=list)
    shift: float = 0.0
    flat: bool = False


def calibrate(system: OdeSystem, obs_times, obs_values, free_params: Sequence[str],
              bounds: Sequence[tuple], fixed: dict | None = None, xi0=None, T: float | None = None,
              coords: Sequence[int] | None = None, step: float | None = None, grid: int = 32,
              rtol: float = 1e-4, shift_bounds: tuple | None = None,
              max_batch: int = 4096) -> CalibrationResult:
    """Least-squares fit of free parameters to observed coordinates.

    A coarse grid of ``grid`` points per free parameter is followed by
    repeated local zooms (halving the bracket) until every bracket is below
    ``rtol`` relative to the incumbent.  With ``shift_bounds`` the path is
    also translated in time, ``xi(t - shift)``, minimized per candidate
    without re-integrating.
    """
    obs_times = np.asarray(obs_times, dtype=float)
    obs_values = np.asarray(obs_values, dtype=float).reshape(len(obs_times), -1)
    if len(obs_times) == 0:
        raise ValueError("calibration needs at least one observation")
    bounds = [tuple(map(float, b)) for b in bounds]
    if any(not (np.isfinite(lo) and np.isfinite(hi) and lo < hi) for lo, hi in bounds):
        raise ValueError("bounds must be finite with lo < hi")
    fixed = dict(fixed or {})
    coords = list(range(obs_values.shape[1])) if coords is None else list(coords)
    free_idx = [system.param_index(n) for n in free_params]
    base = np.array([fixed.get(n, np.nan) for n in system.param_names], dtype=float)
    horizon = T if T is not None else float(obs_times.max())
    if shift_bounds is not None:
        horizon = horizon - shift_bounds[0]
    if step is None:
        step = horizon / 2000
    n_steps = max(1, int(math.ceil(horizon / step)))
    mask = np.isfinite(obs_values[:, : len(coords)])
    target = np.where(mask, obs_values[:, : len(coords)], 0.0)
    shifts = None if shift_bounds is None else np.linspace(shift_bounds[0], shift_bounds[1], 65)

    def losses(theta):
        out = np.empty(len(theta))
        for s in range(0, len(theta), max_batch):
            th = theta[s:s + max_batch]
            P = np.tile(base, (len(th), 1))
            P[:, free_idx] = th
            times, vals = integrate_batch(system, xi0, horizon, n_steps, P)
            vals = vals[:, :, coords]
            if shifts is None:
                q = np.broadcast_to(obs_times, (len(th), len(obs_times)))
                pred = _interp_uniform(times, vals, q)
                out[s:s + len(th)] = (((pred - target) * mask) ** 2).sum(axis=(1, 2))
            else:
                out[s:s + len(th)] = _best_shift(times, vals, obs_times, target, mask, shifts)[0]
        return out

    axes = [np.linspace(lo, hi, grid) for lo, hi in bounds]
    cand = np.array(list(itertools.product(*axes)))
    vals = losses(cand)
    if np.ptp(vals) <= 1e-12 * (1 + abs(vals.min())):
        warnings.warn("flat calibration objective; returning the grid midpoint", RuntimeWarning)
        mid = np.array([(lo + hi) / 2 for lo, hi in bounds])
        return CalibrationResult(dict(zip(free_params, mid)), float(vals[0]), [float(vals[0])],
                                 flat=True)
    k = int(np.argmin(vals))
    best, best_val = cand[k], float(vals[k])
    history = [best_val]
    half = np.array([(hi - lo) / (grid - 1) for lo, hi in bounds])
    lows = np.array([b[0] for b in bounds])
    highs = np.array([b[1] for b in bounds])
    offsets = np.array(list(itertools.product(*[np.linspace(-1, 1, 5)] * len(bounds))))
    while np.any(half > rtol * np.maximum(np.abs(best), 1e-12)):
        local = np.clip(best + offsets * half, lows, highs)
        lv = losses(local)
        k = int(np.argmin(lv))
        if lv[k] < best_val:
            best, best_val = local[k], float(lv[k])
        history.append(best_val)
        half = half / 2
    shift = 0.0
    if shifts is not None:
        P = base.copy()
        P[free_idx] = best
        times, vals = integrate_batch(system, xi0, horizon, n_steps, P[None, :])
        shift = float(_best_shift(times, vals[:, :, coords], obs_times, target, mask, shifts)[1][0])
    return CalibrationResult(dict(zip(free_params, best)), best_val, history, shift)


def _best_shift(times, vals, obs_times, target, mask, shifts):
    B = vals.shape[1]
    best = np.full(B, np.inf)
    arg = np.zeros(B)
    grid = shifts
    width = (grid[1] - grid[0]) if len(grid) > 1 else 0.0
    for _ in range(6):
        for s in grid:
            q = np.broadcast_to(obs_times - s, (B, len(obs_times)))
            loss = (((_interp_uniform(times, vals, q) - target) * mask) ** 2).sum(axis=(1, 2))
            better = loss < best
            best[better] = loss[better]
            arg[better] = s
        if width == 0:
            break
        grid = np.unique(np.clip(np.median(arg) + np.linspace(-width, width, 9), shifts[0], shifts[-1]))
        width /= 4
    return best, arg


# -- shipped systems ----------------------------------------------------------

def _cosine(t, period):
    return 1.5 + 0.5 * np.cos(2 * np.pi * t / period)


def birth_death_system(capacity: int, period: float | None, band: float = 0.5) -> OdeSystem:
    """Birth at ``lam`` while below capacity (linear ramp of width ``band``), death ``r(t) mu xi``."""

    def rhs(t, xi, p):
        gate = np.clip((capacity - xi) / band, 0.0, 1.0)
        r = 1.0 if period is None else _cosine(t, period)
        return gate * p[:, 0:1] - r * xi * p[:, 1:2]

    return OdeSystem(rhs, 1, ("lam", "mu"), "birth-death")


def sir_system() -> OdeSystem:
    """Susceptible, infective and removed fractions with mass-action infection."""

    def rhs(t, xi, p):
        inf = p[:, 0] * xi[:, 0] * xi[:, 1]
        rem = p[:, 1] * xi[:, 1]
        return np.stack((-inf, inf - rem, rem), axis=1)

    return OdeSystem(rhs, 3, ("beta", "gamma"), "sir")


def lotka_volterra_system(period: float | None) -> OdeSystem:
    def rhs(t, xi, p):
        r = 1.0 if period is None else _cosine(t, period)
        x1, x2 = xi[:, 0], xi[:, 1]
        inter = x1 * x2
        return r * np.stack((p[:, 0] * x1 - p[:, 1] * inter, p[:, 2] * inter - p[:, 3] * x2), axis=1)

    return OdeSystem(rhs, 2, ("alpha", "beta", "delta", "gamma"), "lotka-volterra")
