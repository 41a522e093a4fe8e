"""Scikit-learn style wrapper around the Gibbs sampler."""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .diagnostics import Trace
from .models import ObservationSet
from .samplers import ChainState, SamplerConfig, gibbs_sweep
from .simulate import RandomSource

__all__ = ["ChainResult", "run_chain", "paths_on_grid", "MJPPosterior"]


@dataclass
class ChainResult:
    """Trace, kept path samples (absolute time) and the final chain state."""

    trace: Trace
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    chain: ChainState | None = None
    sweeps: list = field(default_factory=list)


def run_chain(model, config: SamplerConfig, observations, n_sweeps: int, rng, burn_in: int = 0,
              thin: int = 1, chain: ChainState | None = None, sweep_fn=None,
              keep_paths: bool = True) -> ChainResult:
    """Run ``n_sweeps`` sweeps and keep every ``thin``-th one after ``burn_in``.

    ``sweep_fn(chain, rng)`` replaces the default Gibbs sweep (used for the
    Metropolis-Hastings baseline).
    """
    if n_sweeps < 0 or burn_in < 0 or thin < 1:
        raise ValueError("need n_sweeps >= 0, burn_in >= 0 and thin >= 1")
    observations = list(observations)
    if chain is None:
        chain = model.initial_chain(observations, rng)
    if sweep_fn is None:
        def sweep_fn(c, r):
            return gibbs_sweep(c, model, config, observations, r)
    out = ChainResult(Trace(tuple(model.param_names)))
    for k in range(1, n_sweeps + 1):
        start = _time.perf_counter()
        chain = sweep_fn(chain, rng)
        elapsed = _time.perf_counter() - start
        if k > burn_in and (k - burn_in) % thin == 0:
            path = chain.path
            moved = np.any(path.states[1:] != path.states[:-1], axis=1)
            out.trace.append(chain.params, model.log_posterior_kernel(chain), int(moved.sum()), elapsed)
            out.sweeps.append(k)
            if keep_paths:
                out.times.append(path.times + chain.t0)
                out.states.append(path.states)
    out.chain = chain
    return out


def paths_on_grid(times_list, states_list, grid) -> np.ndarray:
    """Piecewise-constant path values on ``grid``: shape ``(n_paths, len(grid), d)``.

    Times before a path's first epoch take its first state.
    """
    grid = np.asarray(grid, dtype=float)
    out = []
    for t, x in zip(times_list, states_list):
        idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 1)
        out.append(x[idx])
    return np.asarray(out, dtype=float)


class MJPPosterior(BaseEstimator):
    """Posterior over latent paths and rates of a population model.

    Parameters
    ----------
    model : PopulationModel
        Birth-death, SIR or predator-prey model; its rates seed the chain.
    sampler : SamplerConfig, optional
        Defaults to the nonstationary sampler with ``psi = exit``.
    n_sweeps, burn_in, thin : int
        Chain length and retention.
    noise : float
        Observation noise standard deviation used when ``fit`` receives
        plain arrays.
    coords : sequence of int, optional
        Observed state coordinates for plain-array input.
    random_state : int, Generator or None
    """

    def __init__(self, model=None, sampler=None, n_sweeps: int = 1000, burn_in: int = 100, thin: int = 1,
                 noise: float = 1.0, coords=None, random_state=None):
        self.model = model
        self.sampler = sampler
        self.n_sweeps = n_sweeps
        self.burn_in = burn_in
        self.thin = thin
        self.noise = noise
        self.coords = coords
        self.random_state = random_state

    def _rng(self):
        rs = self.random_state
        if isinstance(rs, np.random.Generator):
            return rs
        if rs is None or isinstance(rs, (int, np.integer)):
            return RandomSource(rs)
        # legacy RandomState: derive a Generator seed from it
        return RandomSource(int(check_random_state(rs).randint(2**31 - 1)))

    def fit(self, X, y=None):
        """Sample the posterior given observations.

        ``X`` is either an :class:`ObservationSet` (or a list of them) or an
        array of observation times with ``y`` the observed values.
        """
        if self.model is None:
            raise ValueError("a model is required")
        if isinstance(X, ObservationSet):
            obs = [X]
        elif isinstance(X, (list, tuple)) and X and all(isinstance(o, ObservationSet) for o in X):
            obs = list(X)
        else:
            if y is None:
                raise ValueError("y is required with array input")
            times = np.asarray(X, dtype=float).reshape(-1)
            vals = np.asarray(y, dtype=float).reshape(len(times), -1)
            obs = [ObservationSet("noisy", times, vals, self.noise, self.coords)]
        config = self.sampler if self.sampler is not None else SamplerConfig()
        rng = self._rng()
        res = run_chain(self.model, config, obs, self.n_sweeps, rng, self.burn_in, self.thin)
        self.trace_ = res.trace
        self.path_times_ = res.times
        self.path_states_ = res.states
        self.chain_ = res.chain
        self.observations_ = obs
        self.n_samples_ = len(res.trace)
        params = np.array(res.trace.params) if len(res.trace) else np.zeros((0, len(self.model.param_names)))
        self.params_mean_ = params.mean(axis=0) if len(params) else np.full(params.shape[1], np.nan)
        return self

    def _grid_samples(self, X):
        check_is_fitted(self, "trace_")
        if self.n_samples_ == 0:
            raise ValueError("no retained samples; increase n_sweeps")
        return paths_on_grid(self.path_times_, self.path_states_, np.asarray(X, dtype=float).reshape(-1))

    def predict(self, X) -> np.ndarray:
        """Posterior mean state at times ``X``, shape ``(len(X), d)``."""
        return self._grid_samples(X).mean(axis=0)

    def predict_interval(self, X, level: float = 0.95):
        """Pointwise central credible interval ``(lower, upper)`` at times ``X``."""
        if not 0 < level < 1:
            raise ValueError("level must lie in (0, 1)")
        s = self._grid_samples(X)
        tail = (1 - level) / 2
        return np.quantile(s, tail, axis=0), np.quantile(s, 1 - tail, axis=0)

    def param_samples(self) -> np.ndarray:
        """Retained rate draws, shape ``(n_samples, n_params)``."""
        check_is_fitted(self, "trace_")
        return np.array(self.trace_.params).reshape(-1, len(self.model.param_names))
