"""Reference forward filtering / backward sampling over restricted supports.

Each epoch carries an explicit support (rows of states), a per-state weight
and a transition-weight matrix from the previous support into the current
one.  This engine favors clarity over speed; the structured engine in
``_engine`` is cross-checked against it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .core import InitialDistribution, StateSpace

__all__ = [
    "EpochStep",
    "FilterState",
    "InfeasibleError",
    "forward_filter",
    "backward_sample",
    "expanding_support",
    "box_states",
    "enumerate_joint",
]


class InfeasibleError(RuntimeError):
    """No path of positive weight survives the constraints."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = int(epoch)
        super().__init__(message or f"zero filtered mass at epoch {epoch}")


@dataclass
class EpochStep:
    """One epoch of the weighted chain.

    Parameters
    ----------
    support : array (n, d)
        Allowed states at this epoch.
    log_weight : array (n,)
        Log per-state multiplier; ``-inf`` marks zero weight.
    transition : array or sparse matrix (n_prev, n), optional
        Nonnegative weights from the previous support; ignored at epoch 0
        and for locked epochs.
    locked : bool
        Force the state to equal the previous one.
    """

    support: np.ndarray
    log_weight: np.ndarray | None = None
    transition: object = None
    locked: bool = False

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.int64))
        if len(self.support) == 0:
            raise ValueError("empty support")
        if self.log_weight is None:
            self.log_weight = np.zeros(len(self.support))
        self.log_weight = np.asarray(self.log_weight, dtype=float)
        if self.log_weight.shape != (len(self.support),):
            raise ValueError("one weight per support state is required")

    @classmethod
    def from_weights(cls, support, weight, transition=None, locked=False) -> "EpochStep":
        with np.errstate(divide="ignore"):
            return cls(support, np.log(np.asarray(weight, dtype=float)), transition, locked)


@dataclass
class FilterState:
    """Normalized filtered masses and per-epoch log normalizers."""

    masses: list
    log_normalizers: np.ndarray
    operations: int = 0

    @property
    def log_evidence(self) -> float:
        return float(np.sum(self.log_normalizers))


def _locked_matrix(prev: np.ndarray, cur: np.ndarray):
    """Identity correspondence between two supports."""
    keys = {tuple(s): j for j, s in enumerate(cur)}
    rows, cols = [], []
    for i, s in enumerate(prev):
        j = keys.get(tuple(s))
        if j is not None:
            rows.append(i)
            cols.append(j)
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(prev), len(cur)))


def _as_csr(step: EpochStep, prev: np.ndarray):
    if step.locked:
        return _locked_matrix(prev, step.support)
    mat = step.transition
    if mat is None:
        raise ValueError("non-initial epochs need a transition matrix")
    mat = sparse.csr_matrix(mat)
    if mat.shape != (len(prev), len(step.support)):
        raise ValueError("transition shape does not match supports")
    if mat.nnz and (mat.data.min() < 0 or not np.all(np.isfinite(mat.data))):
        raise ValueError("transition weights must be finite and nonnegative")
    return mat


def forward_filter(steps, init: InitialDistribution) -> FilterState:
    """Filter forward; masses are renormalized at every epoch in log space."""
    first = steps[0]
    log_pi = init.log_prob(first.support)
    lw = log_pi + first.log_weight
    if not np.any(np.isfinite(lw)):
        raise InfeasibleError(0)
    z = logsumexp(lw)
    masses = [np.exp(lw - z)]
    norms = [z]
    ops = 0
    for i in range(1, len(steps)):
        step = steps[i]
        mat = _as_csr(step, steps[i - 1].support)
        ops += mat.nnz
        pred = mat.T @ masses[-1]
        with np.errstate(divide="ignore"):
            lw = np.log(pred) + step.log_weight
        lw[pred <= 0] = -np.inf
        if not np.any(np.isfinite(lw)):
            raise InfeasibleError(i)
        z = logsumexp(lw)
        masses.append(np.exp(lw - z))
        norms.append(z)
    return FilterState(masses, np.asarray(norms), ops)


def backward_sample(filt: FilterState, steps, rng, size: int | None = None,
                    indices: bool = False) -> np.ndarray:
    """Draw state sequences given a successful forward pass.

    Returns an array ``(m+1, d)``, or ``(size, m+1, d)`` when ``size`` is given.
    With ``indices`` the support indices ``(m+1,)`` / ``(size, m+1)`` are
    returned instead of states.
    """
    n = 1 if size is None else int(size)
    m = len(steps) - 1
    idx = np.empty((n, m + 1), dtype=np.int64)
    idx[:, m] = _categorical(np.broadcast_to(filt.masses[m], (n, len(filt.masses[m]))), rng)
    for i in range(m, 0, -1):
        mat = _as_csr(steps[i], steps[i - 1].support).tocsc()
        cols = mat[:, idx[:, i]].toarray().T
        probs = cols * filt.masses[i - 1][None, :]
        idx[:, i - 1] = _categorical(probs, rng)
    if indices:
        return idx[0] if size is None else idx
    out = np.stack([steps[i].support[idx[:, i]] for i in range(m + 1)], axis=1)
    return out[0] if size is None else out


def _categorical(probs: np.ndarray, rng) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cum[:, -1]
    out = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(out, probs.shape[1] - 1)


def box_states(lo, hi) -> np.ndarray:
    """All integer states in the box ``lo <= x <= hi``."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def expanding_support(previous, jump_magnitudes=1, space: StateSpace | None = None):
    """Bounding box of ``previous`` grown by the jump magnitude per coordinate.

    ``previous`` is either an ``(n, d)`` state array or a ``(lo, hi)`` pair;
    the result has the same form, clipped to ``space`` when given.
    """
    if isinstance(previous, tuple):
        lo, hi = (np.asarray(v, dtype=np.int64) for v in previous)
        as_box = True
    else:
        prev = np.atleast_2d(np.asarray(previous, dtype=np.int64))
        lo, hi = prev.min(axis=0), prev.max(axis=0)
        as_box = False
    step = np.broadcast_to(np.asarray(jump_magnitudes, dtype=np.int64), lo.shape)
    lo, hi = lo - step, hi + step
    if space is not None:
        lo = np.maximum(lo, space.lower_array)
        hi = np.minimum(hi, space.upper_array)
    return (lo, hi) if as_box else box_states(lo, hi)


def enumerate_joint(steps, init: InitialDistribution):
    """Exact law of the weighted chain by brute-force enumeration.

    Returns ``(index_sequences (K, m+1), probabilities (K,))`` over all
    sequences of support indices with positive weight.  Exponential in the
    number of epochs; meant as a test oracle.
    """
    seqs = np.arange(len(steps[0].support))[:, None]
    with np.errstate(divide="ignore"):
        logp = init.log_prob(steps[0].support) + steps[0].log_weight
    keep = np.isfinite(logp)
    seqs, logp = seqs[keep], logp[keep]
    for i in range(1, len(steps)):
        mat = _as_csr(steps[i], steps[i - 1].support).toarray()
        n = len(steps[i].support)
        prev = np.repeat(seqs[:, -1], n)
        nxt = np.tile(np.arange(n), len(seqs))
        with np.errstate(divide="ignore"):
            lp = np.repeat(logp, n) + np.log(mat[prev, nxt]) + steps[i].log_weight[nxt]
        keep = np.isfinite(lp)
        seqs = np.column_stack((np.repeat(seqs, n, axis=0), nxt))[keep]
        logp = lp[keep]
    if len(logp) == 0:
        raise InfeasibleError(len(steps) - 1)
    return seqs, np.exp(logp - logsumexp(logp))
