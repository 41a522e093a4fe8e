"""Birth-death, SIR and Lotka-Volterra models with conjugate rate updates.

Every model is a reaction network whose channel rates are
``theta_j h_j(x) r(t)``; each free parameter scales a group of channels, so
with a Gamma prior its full conditional given a path is again Gamma with

    shape = prior shape + number of jumps in the group
    rate  = prior rate  + sum over holding intervals of h_j(x_i) * int r(s) ds
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import meanfield
from .core import (CosineSeasonality, InitialDistribution, RateKernel, StateSpace, Trajectory,
                   _unchecked, state_at, trajectory_log_density)
from .envelopes import Constraints, SeparableTerm, full_constraints
from .samplers import ChainState
from .simulate import gillespie

__all__ = [
    "GammaPrior",
    "ObservationSet",
    "path_statistics",
    "conjugate_gamma_update",
    "bd_update_mu",
    "sir_update_rates",
    "sir_update_t0",
    "sir_mh_baseline_sweep",
    "lv_update_rates",
    "observation_log_likelihood",
    "BirthDeathModel",
    "SIRModel",
    "LotkaVolterraModel",
]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior."""

    shape: float = 1.0
    rate: float = 0.01

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma prior needs positive shape and rate")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return (self.shape * math.log(self.rate) - math.lgamma(self.shape)
                + (self.shape - 1) * np.log(x) - self.rate * x)


# -- observations -------------------------------------------------------------

@njit(cache=True)
def _fill_gaussian(lo, hi, offs, ew, key_ep, key_c, n, s1, s2, sigma, const):
    for k in range(len(key_ep)):
        i, c = key_ep[k], key_c[k]
        base = offs[i, c] - lo[i, c]
        for x in range(lo[i, c], hi[i, c] + 1):
            ew[base + x] += -(n[k] * x * x - 2.0 * x * s1[k] + s2[k]) / (2.0 * sigma * sigma) - n[k] * const


class ObservationSet:
    """Observations of a path.

    Parameters
    ----------
    kind : {'noisy', 'exact', 'jump'}
    times : array (R,)
    values : array (R, k), optional
        Observed values of state coordinates ``coords`` (state kinds only).
    sigma : float, optional
        Gaussian noise standard deviation for ``noisy``.
    coords : sequence of int, optional
        State coordinates the value columns refer to (default ``0..k-1``).
    detection : dict, optional
        ``{channel name: probability}`` for ``jump``; a detected jump at an
        observation time contributes ``p``, any other jump ``1 - p``.
    """

    KINDS = ("noisy", "exact", "jump")

    def __init__(self, kind: str, times, values=None, sigma: float | None = None,
                 coords=None, detection: dict | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}")
        self.kind = kind
        self.times = np.asarray(times, dtype=float).reshape(-1)
        if len(self.times) > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("observation times must be ordered")
        if kind == "jump":
            self.values = np.zeros((len(self.times), 0))
            self.detection = dict(detection or {})
            self.coords = ()
        else:
            vals = np.zeros((0, 1)) if values is None else np.asarray(values, dtype=float)
            if vals.size == 0:
                self.values = vals.reshape(0, vals.shape[-1] if vals.ndim == 2 else 1)
            else:
                self.values = vals.reshape(len(self.times), -1)
            self.coords = tuple(range(self.values.shape[1])) if coords is None else tuple(coords)
            if len(self.coords) != self.values.shape[1]:
                raise ValueError("one coordinate per value column is required")
            self.detection = {}
        if kind == "noisy":
            if sigma is None or not sigma > 0:
                raise ValueError("noisy observations need sigma > 0")
        self.sigma = None if sigma is None else float(sigma)

    def __len__(self):
        return len(self.times)

    def __repr__(self):
        return f"ObservationSet(kind={self.kind!r}, n={len(self)})"

    def shifted(self, delta: float) -> "ObservationSet":
        """Copy with all times moved by ``delta``."""
        new = ObservationSet.__new__(ObservationSet)
        new.__dict__.update(self.__dict__)
        new.times = self.times + delta
        return new

    def epoch_index(self, epoch_times) -> np.ndarray:
        """Epoch hosting each observation: ``t_hat_i <= t_r < t_hat_{i+1}``."""
        return np.searchsorted(epoch_times, self.times, side="right") - 1

    def epoch_constraints(self, epoch_times, space: StateSpace) -> Constraints:
        cons = full_constraints(len(epoch_times), space)
        if self.kind == "jump" or len(self) == 0:
            return cons
        ep = self.epoch_index(epoch_times)
        if np.any(ep < 0):
            raise ValueError("observation before the first epoch")
        if self.kind == "exact":
            for col, c in enumerate(self.coords):
                v = np.rint(self.values[:, col]).astype(np.int64)
                np.maximum.at(cons.lo[:, c], ep, v)
                np.minimum.at(cons.hi[:, c], ep, v)
            return cons
        coords = np.asarray(self.coords)
        values, sigma = self.values, self.sigma
        # per (epoch, coord) list of observed values
        pair_ep = np.repeat(ep, len(coords))
        pair_c = np.tile(coords, len(ep))
        pair_v = values.ravel()
        ok = np.isfinite(pair_v)
        pair_ep, pair_c, pair_v = pair_ep[ok], pair_c[ok], pair_v[ok]
        # sufficient statistics (count, sum, sum of squares) per (epoch, coord)
        keys, inv = np.unique(pair_ep * space.dimension + pair_c, return_inverse=True)
        n = np.bincount(inv, minlength=len(keys)).astype(float)
        s1 = np.bincount(inv, pair_v, minlength=len(keys))
        s2 = np.bincount(inv, pair_v**2, minlength=len(keys))
        const = math.log(sigma) + _LOG_SQRT_2PI

        def gaussian(e, c, x):
            out = np.zeros(len(x))
            if len(keys) == 0:
                return out
            k = e * space.dimension + c
            pos = np.minimum(np.searchsorted(keys, k), len(keys) - 1)
            hit = keys[pos] == k
            p = pos[hit]
            xv = x[hit].astype(float)
            out[hit] = -(n[p] * xv**2 - 2 * xv * s1[p] + s2[p]) / (2 * sigma**2) - n[p] * const
            return out

        key_ep, key_c = np.divmod(keys, space.dimension)

        def fill(lo, hi, offs, ew):
            _fill_gaussian(lo, hi, offs, ew, key_ep, key_c, n, s1, s2, float(sigma), const)

        cons.terms.append(SeparableTerm(gaussian, fill))
        return cons

    def detection_probabilities(self, kernel: RateKernel):
        if self.kind != "jump":
            return None
        p = np.zeros(kernel.n_channels)
        for name, prob in self.detection.items():
            p[kernel.names.index(name)] = prob
        return p

    def log_likelihood(self, traj, kernel: RateKernel | None = None) -> float:
        return observation_log_likelihood(self, traj, kernel)

    def simulate(self, traj, rng, kernel: RateKernel | None = None) -> "ObservationSet":
        """Fresh observations of ``traj`` at the same times (state kinds)."""
        if self.kind == "jump":
            raise NotImplementedError("jump observations are read from the path tags")
        x = np.stack([state_at(traj, t) for t in self.times]) if len(self) else np.zeros((0, traj.dimension))
        vals = x[:, list(self.coords)].astype(float)
        if self.kind == "noisy":
            vals = vals + self.sigma * rng.standard_normal(vals.shape)
        return ObservationSet(self.kind, self.times, vals, self.sigma, self.coords)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.values.shape[1]
        w.writerow(["time", "kind"] + [f"value_{c}" for c in range(max(k, 1))])
        for r, t in enumerate(self.times):
            vals = [repr(float(v)) for v in self.values[r]] if k else [""]
            w.writerow([repr(float(t)), self.kind] + vals)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, sigma=None, coords=None, detection=None) -> "ObservationSet":
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[:2] != ["time", "kind"]:
            raise ValueError("observation CSV header must start with time,kind")
        kinds = {r[1] for r in body}
        if len(kinds) > 1:
            raise ValueError("mixed observation kinds in one file")
        kind = kinds.pop() if kinds else "noisy"
        times = [float(r[0]) for r in body]
        if kind == "jump":
            return cls("jump", times, detection=detection)
        vals = np.array([[float(v) if v != "" else np.nan for v in r[2:]] for r in body]).reshape(len(body), -1)
        if kind == "noisy" and sigma is None:
            raise ValueError("noisy observations need sigma")
        return cls(kind, times, vals if len(body) else np.zeros((0, len(header) - 2)), sigma, coords)


def observation_log_likelihood(obs: ObservationSet, traj, kernel: RateKernel | None = None) -> float:
    """Log-likelihood of ``obs`` given a path."""
    if obs.kind == "jump":
        if kernel is None:
            raise ValueError("jump observations need the kernel")
        p = obs.detection_probabilities(kernel)
        jumps = np.nonzero(np.any(traj.states[1:] != traj.states[:-1], axis=1))[0] + 1
        ch = kernel.channel_of(traj.states[jumps] - traj.states[jumps - 1])
        tagged = traj.tags[jumps] >= 0
        if np.any(ch < 0):
            return -math.inf
        if sorted(traj.tags[jumps][tagged].tolist()) != list(range(len(obs))):
            return -math.inf
        with np.errstate(divide="ignore"):
            ll = np.log(p[ch[tagged]]).sum() + np.log1p(-p[ch[~tagged]]).sum()
        return float(ll)
    if len(obs) == 0:
        return 0.0
    x = np.stack([state_at(traj, t) for t in obs.times])[:, list(obs.coords)]
    if obs.kind == "exact":
        return 0.0 if np.array_equal(x, np.rint(obs.values)) else -math.inf
    z = (obs.values - x) / obs.sigma
    ok = np.isfinite(z)
    return float(np.sum(-0.5 * z[ok] ** 2 - math.log(obs.sigma) - _LOG_SQRT_2PI))


# -- sufficient statistics and conjugate updates ------------------------------

def path_statistics(traj, kernel: RateKernel) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel jump counts and exposures ``sum_i h_j(x_i) int r_j``."""
    starts = traj.times
    ends = np.append(starts[1:], traj.horizon)
    h = kernel.structural(traj.states)
    exposure = (h * kernel.season_integrals(starts, ends)).sum(axis=0)
    moved = np.any(traj.states[1:] != traj.states[:-1], axis=1)
    ch = kernel.channel_of((traj.states[1:] - traj.states[:-1])[moved])
    if np.any(ch < 0):
        raise ValueError("path contains a jump outside the reaction network")
    counts = np.bincount(ch, minlength=kernel.n_channels).astype(float)
    return counts, exposure


def conjugate_gamma_update(counts, exposure, groups, priors, rng) -> np.ndarray:
    """One Gamma draw per parameter; ``groups[k]`` lists the channels of parameter ``k``."""
    out = np.empty(len(groups))
    for k, (chs, prior) in enumerate(zip(groups, priors)):
        shape = prior.shape + counts[list(chs)].sum()
        rate = prior.rate + exposure[list(chs)].sum()
        out[k] = rng.gamma(shape, 1.0 / rate)
    return out


def bd_update_mu(traj, prior: GammaPrior, rng, seasonality=None) -> float:
    """Death-rate draw given a birth-death path (death channel ``x mu r(t)``)."""
    r = CosineSeasonality(traj.horizon) if seasonality is None else seasonality
    x = traj.states[:, 0]
    starts = traj.times
    ends = np.append(starts[1:], traj.horizon)
    deaths = int(np.sum(np.diff(x) < 0))
    exposure = float(np.sum(x * r.integral(starts, ends)))
    return float(rng.gamma(prior.shape + deaths, 1.0 / (prior.rate + exposure)))


def sir_update_rates(traj, priors, rng, population: int) -> tuple[float, float]:
    """Infection and removal rate draws given an SIR path."""
    s, i = traj.states[:, 0], traj.states[:, 1]
    dt = np.diff(np.append(traj.times, traj.horizon))
    n_inf = int(np.sum(np.diff(s) < 0))
    n_rem = int(np.sum((np.diff(s) == 0) & (np.diff(i) < 0)))
    valid = (s + i) <= population
    pb, pg = priors
    beta = rng.gamma(pb.shape + n_inf, 1.0 / (pb.rate + np.sum((s * i * dt)[valid])))
    gamma = rng.gamma(pg.shape + n_rem, 1.0 / (pg.rate + np.sum((i * dt)[valid])))
    return float(beta), float(gamma)


def sir_update_t0(t1: float, beta: float, gamma: float, population: int, window: tuple, rng) -> float:
    """Draw the initial infection time on ``[window[0], t1)``.

    Under a uniform prior the density is proportional to
    ``exp(-(beta (N-1) + gamma) (t1 - t0))``; drawn by inverting its CDF.
    """
    lower = float(window[0])
    width = t1 - lower
    if width <= 0:
        raise ValueError("first event precedes the prior window")
    c = beta * (population - 1) + gamma
    u = rng.random()
    if c * width < 1e-12:
        gap = u * width
    else:
        gap = -math.log1p(u * math.expm1(-c * width)) / c
    return t1 - gap


# -- models -------------------------------------------------------------------

class PopulationModel:
    """Shared plumbing for reaction-network models with Gamma-conjugate rates."""

    param_names: tuple = ()
    #: channel indices scaled by each parameter
    groups: tuple = ()

    def __init__(self, space, base_kernel: RateKernel, initial: InitialDistribution, params,
                 priors=None, free=None):
        self.space = space
        self.base_kernel = base_kernel
        self.initial = initial
        self.params = np.asarray(params, dtype=float)
        self.priors = tuple(priors) if priors is not None else tuple(GammaPrior() for _ in self.param_names)
        self.free = np.ones(len(self.param_names), bool) if free is None else np.asarray(free, bool)
        self.mean_path: meanfield.MeanPath | None = None
        base_kernel.structure_table  # build once, shared by all rate updates

    def __repr__(self):
        vals = ", ".join(f"{n}={v:g}" for n, v in zip(self.param_names, self.params))
        return f"{type(self).__name__}({vals})"

    def channel_rates(self, params) -> np.ndarray:
        theta = np.zeros(self.base_kernel.n_channels)
        for k, chs in enumerate(self.groups):
            theta[list(chs)] = params[k]
        return theta

    def kernel(self, params=None) -> RateKernel:
        params = self.params if params is None else np.asarray(params, dtype=float)
        return self.base_kernel.with_rates(self.channel_rates(params))

    def max_exit_rate(self, params=None) -> float:
        return self.kernel(params).sup_exit_rate()

    def update_parameters(self, chain: ChainState, rng) -> ChainState:
        counts, exposure = path_statistics(chain.path, self.kernel(chain.params))
        draw = conjugate_gamma_update(counts, exposure, self.groups, self.priors, rng)
        chain.params = np.where(self.free, draw, chain.params)
        return chain

    def log_posterior_kernel(self, chain: ChainState) -> float:
        """Complete-data log density (path density plus priors of free rates)."""
        lp = trajectory_log_density(chain.path, self.kernel(chain.params), self.initial)
        for k, prior in enumerate(self.priors):
            if self.free[k]:
                lp += float(prior.logpdf(chain.params[k]))
        return lp

    def envelope_center(self, chain: ChainState):
        if self.mean_path is None:
            return None
        mp = self.mean_path
        return lambda t: mp.at(t)[:, : self.space.dimension]

    def observations_for(self, chain: ChainState, observations):
        return list(observations)

    def simulate(self, params, rng, horizon: float) -> Trajectory:
        return gillespie(self.kernel(params), self.initial, horizon, rng)

    def sample_prior(self, rng) -> np.ndarray:
        draw = np.array([rng.gamma(p.shape, 1.0 / p.rate) for p in self.priors])
        return np.where(self.free, draw, self.params)

    def initial_chain(self, observations, rng, params=None, horizon: float | None = None) -> ChainState:
        params = self.params if params is None else np.asarray(params, dtype=float)
        path = self.simulate(params, rng, horizon)
        return ChainState(path, params.copy())


class BirthDeathModel(PopulationModel):
    """Immigration-death process on ``{0..N}`` with seasonal deaths.

    Births arrive at ``lam`` while ``x < N``; each individual dies at
    ``mu r(t)`` with ``r(t) = 3/2 + cos(2 pi t / T) / 2`` (``r = 1`` when
    ``seasonal=False``).  ``lam`` is fixed by default.
    """

    param_names = ("lam", "mu")
    groups = ((0,), (1,))

    def __init__(self, capacity: int, lam: float, mu: float, horizon: float, seasonal: bool = True,
                 prior_mu: GammaPrior | None = None, prior_lam: GammaPrior | None = None,
                 infer_lam: bool = False, initial: InitialDistribution | None = None):
        self.capacity = int(capacity)
        self.horizon = float(horizon)
        self.seasonal = seasonal
        N = self.capacity
        space = StateSpace([0], [N])

        def structure(x):
            return np.stack(((x[:, 0] < N).astype(float), x[:, 0].astype(float)), axis=1)

        season = CosineSeasonality(horizon) if seasonal else None
        kernel = RateKernel(space, [[1], [-1]], [lam, mu], structure, [None, season], ("birth", "death"))
        init = initial if initial is not None else InitialDistribution.point([N])
        super().__init__(space, kernel, init, [lam, mu],
                         [prior_lam or GammaPrior(), prior_mu or GammaPrior()], [infer_lam, True])

    def ode(self) -> meanfield.OdeSystem:
        return meanfield.birth_death_system(self.capacity, self.horizon if self.seasonal else None)

    def calibrate_mean(self, obs: ObservationSet, bounds=(1e-4, 0.5), step: float | None = None):
        """Fit ``mu`` of the mean dynamics to noisy observations; stores ``mean_path``."""
        x0 = float(self.initial.states[0, 0])
        res = meanfield.calibrate(self.ode(), obs.times, obs.values, ["mu"], [bounds],
                                  fixed={"lam": self.params[0]}, xi0=[x0], T=self.horizon, step=step)
        self.mean_path = meanfield.integrate(self.ode(), [x0], self.horizon,
                                             self.horizon / 1e4, [self.params[0], res.params["mu"]])
        return res

    def simulate(self, params, rng, horizon=None) -> Trajectory:
        return super().simulate(params, rng, self.horizon if horizon is None else horizon)

    def equally_spaced_observations(self, path, n: int, sigma: float, rng) -> ObservationSet:
        times = self.horizon * np.arange(1, n + 1) / n if n else np.zeros(0)
        template = ObservationSet("noisy", times, np.zeros((n, 1)), sigma)
        return template.simulate(path, rng)


class LotkaVolterraModel(PopulationModel):
    """Seasonal predator-prey network on ``{0..N}^2``.

    Prey birth ``alpha x1``, predation ``beta x1 x2``, predator birth
    ``delta x1 x2`` and predator death ``gamma x2``, each times ``r(t)``;
    births are switched off at the capacity.
    """

    param_names = ("alpha", "beta", "delta", "gamma")
    groups = ((0,), (1,), (2,), (3,))

    def __init__(self, capacity: int, params=(0.125, 0.005, 0.005, 0.1), horizon: float = 20.0,
                 x0=None, priors=None):
        N = self.capacity = int(capacity)
        self.horizon = float(horizon)
        space = StateSpace([0, 0], [N, N])

        def structure(x):
            x1 = x[:, 0].astype(float)
            x2 = x[:, 1].astype(float)
            return np.stack((x1 * (x[:, 0] < N), x1 * x2, x1 * x2 * (x[:, 1] < N), x2), axis=1)

        season = CosineSeasonality(horizon)
        kernel = RateKernel(space, [[1, 0], [-1, 0], [0, 1], [0, -1]], params, structure,
                            [season] * 4, ("prey_birth", "predation", "predator_birth", "predator_death"))
        x0 = [N // 2, N // 2] if x0 is None else x0
        super().__init__(space, kernel, InitialDistribution.point(x0), params, priors)

    def ode(self) -> meanfield.OdeSystem:
        return meanfield.lotka_volterra_system(self.horizon)

    def set_mean_path(self, params=None, step: float | None = None) -> meanfield.MeanPath:
        """Mean path at the given (default: current) rates, used to center envelopes."""
        params = self.params if params is None else np.asarray(params, dtype=float)
        x0 = self.initial.states[0].astype(float)
        self.mean_path = meanfield.integrate(self.ode(), x0, self.horizon, step or self.horizon / 1e4, params)
        return self.mean_path

    @staticmethod
    def random_initial_state(capacity: int, rng) -> np.ndarray:
        return rng.integers(1, capacity + 1, size=2)

    def simulate(self, params, rng, horizon=None) -> Trajectory:
        return super().simulate(params, rng, self.horizon if horizon is None else horizon)

    def equally_spaced_observations(self, path, n: int, sigma: float, rng) -> ObservationSet:
        times = self.horizon * np.arange(1, n + 1) / n
        template = ObservationSet("noisy", times, np.zeros((n, 2)), sigma, (0, 1))
        return template.simulate(path, rng)


def lv_update_rates(traj, priors, rng, capacity: int, seasonality=None) -> np.ndarray:
    """Four independent Gamma draws for the predator-prey rates."""
    r = CosineSeasonality(traj.horizon) if seasonality is None else seasonality
    model = LotkaVolterraModel(capacity, horizon=traj.horizon, priors=priors)
    kernel = model.base_kernel
    if not isinstance(r, CosineSeasonality) or r.period != traj.horizon:
        kernel = RateKernel(kernel.space, kernel.stoichiometry, kernel.rates, kernel.structure,
                            [r] * 4, kernel.names)
    counts, exposure = path_statistics(traj, kernel)
    return conjugate_gamma_update(counts, exposure, model.groups, model.priors, rng)


class SIRModel(PopulationModel):
    """Closed-population epidemic on ``(s, i)`` with observed removal times.

    Internally the path clock starts at the initial infection ``t0`` (state
    ``(N-1, 1)``); ``chain.t0`` stores its absolute time.  Removal
    observations are identified through epoch tags.  By default the epidemic
    is conditioned to have ended at the last removal (``i = 0`` there).
    """

    param_names = ("beta", "gamma")
    groups = ((0,), (1,))

    def __init__(self, population: int, beta: float, gamma: float, removal_times=None,
                 priors=None, ceased: bool = True, window: float | None = None):
        N = self.population = int(population)
        space = StateSpace([0, 0], [N, N])

        def structure(x):
            s = x[:, 0].astype(float)
            i = x[:, 1].astype(float)
            ok = (x[:, 0] + x[:, 1]) <= N
            return np.stack((s * i * ok, i * ok), axis=1)

        kernel = RateKernel(space, [[-1, 1], [0, -1]], [beta, gamma], structure, names=("infection", "removal"))
        super().__init__(space, kernel, InitialDistribution.point([N - 1, 1]), [beta, gamma], priors)
        self.ceased = ceased
        self.removal_times = None if removal_times is None else np.sort(np.asarray(removal_times, float))
        self.window = window

    @property
    def removals(self) -> ObservationSet:
        return ObservationSet("jump", self.removal_times, detection={"removal": 1.0})

    @property
    def t0_window(self) -> tuple:
        """Uniform prior support for the initial infection time."""
        first, last = self.removal_times[0], self.removal_times[-1]
        width = last if self.window is None else self.window
        return first - width, first

    def observations_for(self, chain: ChainState, observations=()):
        obs = [self.removals]
        if self.ceased:
            obs.append(ObservationSet("exact", [chain.path.horizon], [[0]], coords=(1,)))
        return obs + list(observations)

    def ode(self) -> meanfield.OdeSystem:
        return meanfield.sir_system()

    def calibrate_mean(self, step: float | None = None, grid: int = 32):
        """Fit ``(beta, gamma)`` and a time offset to the removal curve."""
        N = self.population
        t = self.removal_times
        counts = np.arange(1, len(t) + 1, dtype=float)[:, None]
        span = t[-1] - t[0]
        lo, hi = self.t0_window
        res = meanfield.calibrate(
            self.ode(), t, counts, ["beta", "gamma"],
            [(0.1 / N, 10.0 / N), (0.05, 5.0)], xi0=[N - 1.0, 1.0, 0.0], T=t[-1] + span,
            coords=[2], step=step or (t[-1] + span) / 1000, grid=grid, shift_bounds=(lo, hi))
        total = t[-1] - res.shift + span
        self.mean_shift = res.shift
        self.mean_path = meanfield.integrate(self.ode(), [N - 1.0, 1.0, 0.0], total, total / 1e4,
                                             [res.params["beta"], res.params["gamma"]])
        return res

    def envelope_center(self, chain: ChainState):
        if self.mean_path is None:
            return None
        mp, offset = self.mean_path, chain.t0 - getattr(self, "mean_shift", 0.0)
        return lambda t: mp.at(np.asarray(t) + offset)[:, :2]

    def update_parameters(self, chain: ChainState, rng) -> ChainState:
        beta, gamma = sir_update_rates(chain.path, self.priors, rng, self.population)
        chain.params = np.where(self.free, [beta, gamma], chain.params)
        return self.update_t0(chain, rng)

    def update_t0(self, chain: ChainState, rng) -> ChainState:
        path = chain.path
        t1 = chain.t0 + path.times[1]
        beta, gamma = chain.params
        new_t0 = sir_update_t0(t1, beta, gamma, self.population, self.t0_window, rng)
        chain.path = shift_origin(path, chain.t0 - new_t0)
        chain.t0 = new_t0
        return chain

    def simulate_epidemic(self, rng, final_removed: int | None = None, max_tries: int = 100000):
        """Simulate to extinction; optionally reject until ``final_removed`` is hit.

        Returns the path (origin at the initial infection) and absolute removal times.
        """
        kernel = self.kernel()
        for _ in range(max_tries):
            path = gillespie(kernel, self.initial, 1e6, rng)
            s, i = path.states[:, 0], path.states[:, 1]
            removed = self.population - s[-1] - i[-1]
            if final_removed is None or removed == final_removed:
                rem = np.nonzero((np.diff(s) == 0) & (np.diff(i) < 0))[0] + 1
                end = path.times[-1]
                tags = np.full(len(path.times), -1, dtype=np.int64)
                tags[rem] = np.arange(len(rem))
                return _unchecked(Trajectory, path.times, path.states, end, tags), path.times[rem]
        raise RuntimeError("could not reach the requested final size")

    def initial_chain(self, observations=(), rng=None, params=None, horizon=None) -> ChainState:
        """Feasible start: one infection midway inside each inter-removal gap."""
        params = self.params if params is None else np.asarray(params, dtype=float)
        R = self.removal_times
        lo, hi = self.t0_window
        t0 = max(R[0] - 0.5, lo + 0.5 * (hi - lo))
        rint = R - t0
        prev = np.concatenate(([0.0], rint[:-1]))
        infections = 0.5 * (prev[:-1] + rint[:-1])
        path = build_sir_path(rint, infections, self.population, rint[-1])
        return ChainState(path, params.copy(), t0=t0)


def shift_origin(path: Trajectory, delta: float) -> Trajectory:
    """Move every epoch after the first by ``delta`` (and the horizon)."""
    times = path.times.copy()
    times[1:] += delta
    return _unchecked(Trajectory, times, path.states, path.horizon + delta, path.tags)


def build_sir_path(removals, infections, population: int, horizon: float) -> Trajectory:
    """SIR path from internal removal and infection times (initial infection at 0)."""
    removals = np.asarray(removals, float)
    infections = np.asarray(infections, float)
    times = np.concatenate((removals, infections))
    kind = np.concatenate((np.ones(len(removals), int), np.zeros(len(infections), int)))
    tag = np.concatenate((np.arange(len(removals)), np.full(len(infections), -1)))
    order = np.argsort(times, kind="stable")
    times, kind, tag = times[order], kind[order], tag[order]
    ds = np.where(kind == 0, -1, 0)
    di = np.where(kind == 0, 1, -1)
    s = population - 1 + np.concatenate(([0], np.cumsum(ds)))
    i = 1 + np.concatenate(([0], np.cumsum(di)))
    return _unchecked(Trajectory, np.concatenate(([0.0], times)), np.stack((s, i), axis=1).astype(np.int64),
                      float(horizon), np.concatenate(([-1], tag)).astype(np.int64))


def _sir_log_density(removals, infections, beta, gamma, population, horizon, ceased) -> float:
    """Path log density for event times on ``[0, horizon]`` (initial infection at 0)."""
    times = np.concatenate((removals, infections))
    if np.any(infections <= 0) or np.any(infections > horizon):
        return -math.inf
    kind = np.concatenate((np.ones(len(removals), int), np.zeros(len(infections), int)))
    order = np.argsort(times, kind="stable")
    times, kind = times[order], kind[order]
    s = population - 1 - np.concatenate(([0], np.cumsum(kind == 0)))
    i = 1 + np.concatenate(([0], np.cumsum(np.where(kind == 0, 1, -1))))
    if np.any(i[:-1] < 1) or np.any(i < 0) or np.any(s < 0):
        return -math.inf
    if ceased and i[-1] != 0:
        return -math.inf
    dt = np.diff(np.concatenate(([0.0], times, [horizon])))
    lp = -np.sum((beta * s * i + gamma * i) * dt)
    pre_s, pre_i = s[:-1], i[:-1]
    rates = np.where(kind == 0, beta * pre_s * pre_i, gamma * pre_i)
    return float(lp + np.sum(np.log(rates)))


def sir_mh_baseline_sweep(chain: ChainState, model: SIRModel, rng, fraction: float = 0.5) -> ChainState:
    """Metropolis-Hastings update of infection times, then conjugate rates and ``t0``.

    Each proposal is an addition, deletion or move (chosen uniformly) of one
    non-initial infection time, repeated for ``ceil(fraction * n)`` infections.
    Removal times stay fixed at the data.
    """
    path = chain.path
    T = path.horizon
    moved = np.any(path.states[1:] != path.states[:-1], axis=1)
    diffs = path.states[1:] - path.states[:-1]
    is_inf = moved & (diffs[:, 0] < 0)
    infections = path.times[1:][is_inf].copy()
    removals = path.times[1:][moved & ~is_inf].copy()
    beta, gamma = chain.params
    N = model.population
    cur = _sir_log_density(removals, infections, beta, gamma, N, T, model.ceased)
    n_prop = max(1, math.ceil(fraction * max(len(infections), 1)))
    accepted = 0
    for _ in range(n_prop):
        move = rng.integers(3)
        n = len(infections)
        if move == 0 or n == 0:
            new = np.append(infections, rng.random() * T)
            log_q = math.log(T) - math.log(n + 1)
            if n == 0:
                # from an empty set every move is an addition
                log_q -= math.log(3)
        elif move == 1:
            k = rng.integers(n)
            new = np.delete(infections, k)
            log_q = math.log(n) - math.log(T)
            if n == 1:
                log_q += math.log(3)
        else:
            k = rng.integers(n)
            new = infections.copy()
            new[k] = rng.random() * T
            log_q = 0.0
        prop = _sir_log_density(removals, new, beta, gamma, N, T, model.ceased)
        if prop > -math.inf and math.log(rng.random()) < prop - cur + log_q:
            infections, cur = new, prop
            accepted += 1
    chain = replace(chain, path=build_sir_path(removals, infections, N, T), sweep=chain.sweep + 1,
                    stats={"accepted": accepted, "proposals": n_prop})
    return model.update_parameters(chain, rng)
