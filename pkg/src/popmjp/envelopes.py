"""Auxiliary constraints that restrict per-epoch supports.

Two envelope families bound the deviation of the chain from a deterministic
mean path ``xi(t)``; two split schemes pin states (or state blocks) at a
randomly lagged set of epochs.  Every draw is conditioned on the current
augmented path, so that path always keeps positive weight.

All constraints are expressed as integer boxes ``lo[i] <= x <= hi[i]`` plus
separable per-coordinate log-weight terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from scipy import signal
from scipy.special import log_ndtr

from .core import AugmentedTrajectory, StateSpace
from .ffbs import expanding_support

__all__ = [
    "NormalEnvelopeParams",
    "GammaEnvelopeParams",
    "NormalEnvelope",
    "GammaEnvelope",
    "SplitScheme",
    "Constraints",
    "SeparableTerm",
    "draw_normal_envelope",
    "normal_constraints",
    "draw_gamma_envelope",
    "gamma_constraints",
    "apply_split",
    "lag_epochs",
]


@dataclass(frozen=True)
class NormalEnvelopeParams:
    """Truncated-normal radii with floor ``mu``, scale ``sigma`` and reversion ``kappa``."""

    mu: float
    sigma: float
    kappa: float = 1.0

    def __post_init__(self):
        if not self.mu > 0 or not self.sigma > 0:
            raise ValueError("mu and sigma must be positive")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")


@dataclass(frozen=True)
class GammaEnvelopeParams:
    """Gamma slack around the current deviation with an autoregressive log-mean."""

    mu: float
    sigma: float
    kappa: float
    lag: int
    alpha: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if int(self.lag) != self.lag or self.lag < 1:
            raise ValueError("lag must be a positive integer")
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise ValueError("alpha must be a positive integer")

    @property
    def step_variance(self) -> float:
        phi = 1.0 - self.kappa
        return self.sigma**2 * (1.0 - phi ** (2 * self.lag)) / (1.0 - phi**2)

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (1.0 - (1.0 - self.kappa) ** 2)


@dataclass
class Constraints:
    """Per-epoch boxes and separable log-weight terms.

    ``terms`` are callables ``f(epoch, coord, x) -> log weight`` evaluated on
    flat arrays; they are summed by the sampler once boxes are final.  A
    :class:`SeparableTerm` also carries a compiled in-place fill.
    """

    lo: np.ndarray
    hi: np.ndarray
    terms: list = field(default_factory=list)

    def intersect(self, other: "Constraints") -> "Constraints":
        return Constraints(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi),
                           self.terms + other.terms)

    def empty_epoch(self) -> int:
        bad = np.nonzero(np.any(self.lo > self.hi, axis=1))[0]
        return int(bad[0]) if len(bad) else -1


class SeparableTerm:
    """Log-weight term with a vectorized form and an in-place compiled fill.

    ``func(ep, c, x)`` returns log weights on flat arrays; ``fill(lo, hi,
    offs, ew)`` adds the same values into the flat layout used by
    :func:`assemble_terms`.
    """

    def __init__(self, func: Callable, fill: Callable):
        self.func = func
        self.fill = fill

    def __call__(self, ep, c, x):
        return self.func(ep, c, x)


@njit(cache=True)
def log_ndtr_scalar(z):
    """``log Phi(z)`` with an asymptotic tail below ``z = -30``."""
    if z > 0.0:
        return math.log1p(-0.5 * math.erfc(z / math.sqrt(2.0)))
    if z > -30.0:
        return math.log(0.5 * math.erfc(-z / math.sqrt(2.0)))
    z2 = z * z
    return -0.5 * z2 - math.log(-z) - 0.5 * math.log(2 * math.pi) + math.log1p(-1.0 / z2 + 3.0 / (z2 * z2))


@njit(cache=True)
def _fill_normal(lo, hi, offs, ew, means, center, sigma):
    M, d = lo.shape
    for i in range(1, M):
        for c in range(d):
            base = offs[i, c] - lo[i, c]
            for x in range(lo[i, c], hi[i, c] + 1):
                z = (means[i, c] - abs(x - center[i, c])) / sigma
                ew[base + x] -= log_ndtr_scalar(z)


@njit(cache=True)
def _fill_gamma(lo, hi, offs, ew, epochs, radii, center, beta, alpha):
    d = lo.shape[1]
    for k in range(len(epochs)):
        i = epochs[k]
        for c in range(d):
            base = offs[i, c] - lo[i, c]
            for x in range(lo[i, c], hi[i, c] + 1):
                gap = radii[k, c] - abs(x - center[i, c])
                if gap <= 0.0:
                    ew[base + x] = -np.inf
                elif alpha > 1:
                    ew[base + x] += (alpha - 1) * math.log(gap) - beta[k, c] * gap
                else:
                    ew[base + x] -= beta[k, c] * gap


def full_constraints(n_epochs: int, space: StateSpace) -> Constraints:
    lo = np.tile(space.lower_array, (n_epochs, 1))
    hi = np.tile(space.upper_array, (n_epochs, 1))
    return Constraints(lo, hi)


def _deviation(aug: AugmentedTrajectory, xi: np.ndarray) -> np.ndarray:
    return np.abs(aug.states - xi)


# -- normal envelope ----------------------------------------------------------

@dataclass
class NormalEnvelope:
    params: NormalEnvelopeParams
    radii: np.ndarray
    means: np.ndarray
    center: np.ndarray


@njit(cache=True)
def _truncnorm_above(mean, sd, lower):
    """Draw from N(mean, sd^2) restricted to (lower, inf)."""
    za = (lower - mean) / sd
    if za < 0.45:
        while True:
            z = np.random.standard_normal()
            if z > za:
                return mean + sd * z
    lam = 0.5 * (za + math.sqrt(za * za + 4.0))
    while True:
        z = za - math.log(1.0 - np.random.random()) / lam
        if np.random.random() <= math.exp(-0.5 * (z - lam) ** 2):
            return mean + sd * z


@njit(cache=True)
def _normal_radii(dev, mu, sigma, kappa, seed):
    np.random.seed(seed)
    M, d = dev.shape
    u = np.full((M, d), np.inf)
    mus = np.full((M, d), np.nan)
    for c in range(d):
        for i in range(1, M):
            m = mu[c] if i == 1 else max(mu[c], u[i - 1, c] - kappa)
            mus[i, c] = m
            u[i, c] = _truncnorm_above(m, sigma, dev[i, c])
    return u, mus


def draw_normal_envelope(aug: AugmentedTrajectory, xi: np.ndarray, params: NormalEnvelopeParams,
                         rng) -> NormalEnvelope:
    """Sequential truncated-normal radii for epochs ``1..m``; epoch 0 is free.

    ``xi`` holds the mean path evaluated at the epochs, shape ``(m+1, d)``.
    """
    xi = np.asarray(xi, dtype=float).reshape(aug.states.shape)
    dev = _deviation(aug, xi)
    mu = np.broadcast_to(np.asarray(params.mu, dtype=float), (aug.dimension,)).copy()
    seed = int(rng.integers(0, 2**31 - 1))
    u, mus = _normal_radii(dev, mu, float(params.sigma), float(params.kappa), seed)
    return NormalEnvelope(params, u, mus, xi)


def normal_constraints(env: NormalEnvelope, space: StateSpace) -> Constraints:
    """Windows ``|x - xi| <= u`` with the truncation normalizers divided out."""
    M, d = env.radii.shape
    cons = full_constraints(M, space)
    xi, u = env.center[1:], env.radii[1:]
    cons.lo[1:] = np.maximum(cons.lo[1:], np.ceil(xi - u).astype(np.int64))
    cons.hi[1:] = np.minimum(cons.hi[1:], np.floor(xi + u).astype(np.int64))
    sigma = env.params.sigma
    means, center = env.means, env.center

    def divisor(ep, c, x):
        out = np.zeros(len(x))
        m = ep > 0
        z = (means[ep[m], c[m]] - np.abs(x[m] - center[ep[m], c[m]])) / sigma
        out[m] = -log_ndtr(z)
        return out

    def fill(lo, hi, offs, ew):
        _fill_normal(lo, hi, offs, ew, means, center, float(sigma))

    cons.terms.append(SeparableTerm(divisor, fill))
    return cons


# -- gamma envelope -----------------------------------------------------------

@dataclass
class GammaEnvelope:
    params: GammaEnvelopeParams
    epochs: np.ndarray
    log_means: np.ndarray
    slack: np.ndarray
    radii: np.ndarray
    center: np.ndarray

    @property
    def rates(self) -> np.ndarray:
        return self.params.alpha * np.exp(-self.log_means)


def lag_epochs(n_epochs: int, lag: int, rng, randomize: bool = False) -> np.ndarray:
    """Epochs ``{o, o+l, ...}`` below ``n_epochs`` with random phase ``o`` in ``1..l``.

    With ``randomize`` the lag itself is drawn uniformly in ``[0.8 l, 1.2 l]``.
    """
    if randomize:
        lag = int(rng.integers(max(1, math.ceil(0.8 * lag)), max(1, math.floor(1.2 * lag)) + 1))
    lag = max(1, int(lag))
    phase = int(rng.integers(1, lag + 1))
    return np.arange(phase, n_epochs, lag, dtype=np.int64)


def draw_gamma_envelope(aug: AugmentedTrajectory, xi: np.ndarray, params: GammaEnvelopeParams,
                        rng, max_step=None) -> GammaEnvelope:
    """Gamma slack at lagged epochs, log-means following a lag-``l`` AR(1)."""
    if max_step is not None and np.any(np.asarray(max_step) > 1):
        raise NotImplementedError("gamma envelopes require unit jump magnitudes")
    xi = np.asarray(xi, dtype=float).reshape(aug.states.shape)
    d = aug.dimension
    idx = lag_epochs(aug.n_epochs, params.lag, rng)
    n = len(idx)
    phi = (1.0 - params.kappa) ** params.lag
    if n:
        eps = rng.standard_normal((n, d))
        eps[0] *= math.sqrt(params.stationary_variance)
        eps[1:] *= math.sqrt(params.step_variance)
        log_means = params.mu + signal.lfilter([1.0], [1.0, -phi], eps, axis=0)
    else:
        log_means = np.zeros((0, d))
    beta = params.alpha * np.exp(-log_means)
    slack = rng.gamma(params.alpha, 1.0 / beta)
    dev = _deviation(aug, xi)[idx]
    return GammaEnvelope(params, idx, log_means, slack, dev + slack, xi)


def gamma_constraints(env: GammaEnvelope, space: StateSpace, n_epochs: int,
                      jump_magnitudes=1, first_box=None) -> Constraints:
    """Open windows ``|x - xi| < u`` at lagged epochs, expanding boxes elsewhere."""
    d = space.dimension
    lo = np.empty((n_epochs, d), dtype=np.int64)
    hi = np.empty((n_epochs, d), dtype=np.int64)
    win_lo = np.floor(env.center[env.epochs] - env.radii).astype(np.int64) + 1
    win_hi = np.ceil(env.center[env.epochs] + env.radii).astype(np.int64) - 1
    at = {int(e): k for k, e in enumerate(env.epochs)}
    box = first_box if first_box is not None else (space.lower_array, space.upper_array)
    for i in range(n_epochs):
        if i in at:
            k = at[i]
            box = (np.maximum(win_lo[k], space.lower_array), np.minimum(win_hi[k], space.upper_array))
        elif i > 0:
            box = expanding_support(box, jump_magnitudes, space)
        lo[i], hi[i] = box
    cons = Constraints(lo, hi)
    alpha = env.params.alpha
    pos = np.full(n_epochs, -1, dtype=np.int64)
    pos[env.epochs] = np.arange(len(env.epochs))
    beta = env.rates
    radii, center = env.radii, env.center

    def factor(ep, c, x):
        out = np.zeros(len(x))
        k = pos[ep]
        m = k >= 0
        gap = radii[k[m], c[m]] - np.abs(x[m] - center[ep[m], c[m]])
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (alpha - 1) * np.log(gap) - beta[k[m], c[m]] * gap if alpha > 1 else -beta[k[m], c[m]] * gap
        out[m] = np.where(gap > 0, val, -np.inf)
        return out

    epochs = np.ascontiguousarray(env.epochs, dtype=np.int64)

    def fill(lo, hi, offs, ew):
        _fill_gamma(lo, hi, offs, ew, epochs, radii, center, beta, int(alpha))

    cons.terms.append(SeparableTerm(factor, fill))
    return cons


# -- split schemes ------------------------------------------------------------

@dataclass(frozen=True)
class SplitScheme:
    """Pin states (``bridge``) or state blocks (``partition``) at lagged epochs.

    Partition blocks are boxes of side ``width`` on a grid anchored at
    ``origin`` (default: the lower corner of the space); each block is
    connected under unit moves.
    """

    kind: str
    lag: int
    width: int = 1
    origin: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("bridge", "partition"):
            raise ValueError("split kind must be 'bridge' or 'partition'")
        if self.lag < 1 or self.width < 1:
            raise ValueError("lag and width must be positive")

    def part_of(self, states, space: StateSpace):
        """Bounding box ``(lo, hi)`` of the block containing each state."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        origin = space.lower_array if self.origin is None else np.asarray(self.origin, np.int64)
        k = np.floor_divide(states - origin, self.width)
        lo = origin + k * self.width
        hi = lo + self.width - 1
        return np.maximum(lo, space.lower_array), np.minimum(hi, space.upper_array)


def apply_split(aug: AugmentedTrajectory, scheme: SplitScheme, space: StateSpace, rng):
    """Constraints pinning the lagged epochs, plus those epoch indices."""
    idx = lag_epochs(aug.n_epochs, scheme.lag, rng, randomize=True)
    cons = full_constraints(aug.n_epochs, space)
    if len(idx):
        pinned = aug.states[idx]
        if scheme.kind == "bridge":
            cons.lo[idx] = pinned
            cons.hi[idx] = pinned
        else:
            lo, hi = scheme.part_of(pinned, space)
            if np.any((pinned < lo) | (pinned > hi)):
                raise RuntimeError("block does not contain the current state")
            cons.lo[idx] = lo
            cons.hi[idx] = hi
    return cons, idx


def assemble_terms(lo: np.ndarray, hi: np.ndarray, terms) -> tuple[np.ndarray, np.ndarray]:
    """Flatten separable terms into ``(ew, ew_off)`` for the compiled engine."""
    M, d = lo.shape
    widths = (hi - lo + 1).ravel()
    offs = np.zeros(len(widths), dtype=np.int64)
    np.cumsum(widths[:-1], out=offs[1:])
    total = int(widths.sum())
    ew = np.zeros(total)
    offs = offs.reshape(M, d)
    generic = [t for t in terms if not isinstance(t, SeparableTerm)]
    for term in terms:
        if isinstance(term, SeparableTerm):
            term.fill(lo, hi, offs, ew)
    if generic:
        seg = np.repeat(np.arange(M * d), widths)
        within = np.arange(total) - offs.ravel()[seg]
        ep, c = np.divmod(seg, d)
        x = lo.ravel()[seg] + within
        for term in generic:
            ew += term(ep, c, x)
    return ew, offs


Center = Callable[[np.ndarray], np.ndarray]
