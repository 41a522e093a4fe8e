"""Auxiliary-variable resampling of population jump-process trajectories.

One resampling step:

1. attach candidate epochs to the current path at rate ``psi(t, x)``;
2. draw compensation evidence at rate ``Omega - exit - psi`` (weighting
   times, Poisson counts, or nothing when the integral is used directly);
3. restrict supports (observations, envelopes, splits) and filter forward /
   sample backward over the epochs;
4. drop self-transitions.

``psi`` is restricted to the affine family ``a * exit(x, t) + b``; the
vanilla uniformization sampler is ``a = -1, b = Omega``.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from . import _engine
from .core import AugmentedTrajectory, InitialDistribution, RateKernel, Trajectory, _unchecked, strip_virtual
from .envelopes import (Constraints, GammaEnvelopeParams, NormalEnvelopeParams, SplitScheme,
                        apply_split, assemble_terms, draw_gamma_envelope, draw_normal_envelope,
                        full_constraints, gamma_constraints, normal_constraints)
from .ffbs import EpochStep, InfeasibleError, backward_sample, box_states, forward_filter
from .simulate import InvariantViolation

__all__ = [
    "Psi",
    "SamplerConfig",
    "WeightingEvidence",
    "ChainState",
    "MemoryBudgetExceeded",
    "resolve_omega",
    "sample_candidate_times",
    "sample_compensation",
    "build_epoch_steps",
    "resample_trajectory",
    "gibbs_sweep",
]

VARIANTS = ("naive", "stationary", "nonstationary", "vanilla")
_KIND = {"naive": 1, "vanilla": 1, "stationary": 2, "nonstationary": 3}


class MemoryBudgetExceeded(MemoryError):
    pass


@dataclass(frozen=True)
class Psi:
    """Candidate intensity ``scale * exit(x, t) + offset``.

    With ``complement=True`` the offset is the dominating rate, giving
    ``Omega - exit(x, t)``.
    """

    scale: float = 1.0
    offset: float = 0.0
    complement: bool = False

    @classmethod
    def preset(cls, name: str) -> "Psi":
        presets = {"exit": cls(1.0, 0.0), "half-exit": cls(0.5, 0.0), "vanilla": cls(-1.0, 0.0, True)}
        try:
            return presets[name]
        except KeyError:
            raise ValueError(f"unknown psi preset {name!r}") from None

    def coefficients(self, omega: float | None) -> tuple[float, float]:
        if self.complement:
            if omega is None:
                raise ValueError("complementary psi needs a dominating rate")
            return -1.0, float(omega)
        return float(self.scale), float(self.offset)


@dataclass(frozen=True)
class SamplerConfig:
    variant: str = "nonstationary"
    psi: Psi | str = "exit"
    omega: float | None = None
    omega_factor: float = 1.5
    envelope: NormalEnvelopeParams | GammaEnvelopeParams | None = None
    split: SplitScheme | None = None
    max_retries: int = 25
    memory_budget: float = 512 * 2**20
    weight_offset: int = 0
    engine: str = "compiled"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        psi = Psi.preset(self.psi) if isinstance(self.psi, str) else self.psi
        if self.variant == "vanilla":
            psi = Psi.preset("vanilla")
        object.__setattr__(self, "psi", psi)
        if self.engine not in ("compiled", "reference"):
            raise ValueError("engine must be 'compiled' or 'reference'")
        if self.omega is not None and self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.omega_factor <= 1.0:
            raise ValueError("omega_factor must exceed 1")
        if self.variant != "nonstationary" and not psi.complement and psi.scale < 0:
            raise ValueError("psi must be nonnegative")

    @property
    def kind(self) -> int:
        return _KIND[self.variant]


def resolve_omega(kernel: RateKernel, config: SamplerConfig) -> float | None:
    """Dominating rate: explicit, or ``omega_factor * sup exit`` raised to fit ``psi``."""
    if config.variant == "nonstationary":
        return None
    sup = kernel.sup_exit_rate()
    a, b = config.psi.coefficients(1.0) if config.psi.complement else config.psi.coefficients(None)
    need = sup * (1 + 1e-6) if config.psi.complement else ((1 + a) * sup + b) * (1 + 1e-6)
    if config.omega is not None:
        if config.omega < need:
            raise InvariantViolation(f"omega={config.omega} below required {need}")
        return float(config.omega)
    return max(config.omega_factor * sup, need, 1e-12)


@dataclass
class WeightingEvidence:
    """Compensation evidence: weighting times, counts or integrals."""

    kind: str
    times: np.ndarray | None = None
    pointers: np.ndarray | None = None
    counts: np.ndarray | None = None
    integrals: np.ndarray | None = None

    def __post_init__(self):
        if self.counts is not None and np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")


@dataclass
class ChainState:
    """Current path, parameters and bookkeeping for one chain."""

    path: Trajectory
    params: np.ndarray
    sweep: int = 0
    t0: float = 0.0
    stats: dict = field(default_factory=dict)

    def copy(self) -> "ChainState":
        return replace(self, params=np.array(self.params), stats=dict(self.stats))


# -- candidate epochs ---------------------------------------------------------

def _psi_bound(kernel: RateKernel, states, a: float, b: float) -> np.ndarray:
    sup, inf = kernel.exit_bounds(states)
    return np.maximum(a * (sup if a >= 0 else inf) + b, 0.0)


def _poisson_points(starts, ends, bound, rng):
    """Homogeneous Poisson points per interval; returns (interval index, time)."""
    counts = rng.poisson(bound * (ends - starts))
    owner = np.repeat(np.arange(len(starts)), counts)
    t = starts[owner] + rng.random(len(owner)) * (ends - starts)[owner]
    return owner, t


def sample_candidate_times(traj: Trajectory, kernel: RateKernel, psi: Psi, rng,
                           omega: float | None = None) -> AugmentedTrajectory:
    """Attach virtual epochs at rate ``psi(t, x_i)`` within each holding interval."""
    a, b = psi.coefficients(omega)
    starts = traj.times
    ends = np.append(traj.times[1:], traj.horizon)
    bound = _psi_bound(kernel, traj.states, a, b)
    owner, t = _poisson_points(starts, ends, bound, rng)
    if len(t) and not kernel.homogeneous:
        x = traj.states[owner]
        rate = a * kernel.exit_rates(x, t) + b
        if np.any(rate > bound[owner] * (1 + 1e-9)):
            raise InvariantViolation("candidate bound below psi")
        keep = rng.random(len(t)) * bound[owner] < rate
        owner, t = owner[keep], t[keep]
    times = np.concatenate((starts, t))
    order = np.argsort(times, kind="stable")
    states = np.concatenate((traj.states, traj.states[owner]))[order]
    tags = np.concatenate((traj.tags, np.full(len(t), -1, dtype=np.int64)))[order]
    return _unchecked(AugmentedTrajectory, times[order], states, traj.horizon, tags)


def sample_compensation(aug: AugmentedTrajectory, kernel: RateKernel, omega: float | None,
                        psi: Psi, rng, variant: str) -> WeightingEvidence:
    """Compensating-process evidence at rate ``Omega - exit(x_i, t) - psi(t, x_i)``."""
    starts = aug.times
    ends = np.append(aug.times[1:], aug.horizon)
    if variant == "nonstationary":
        a, b = psi.coefficients(omega)
        ex = kernel.exit_integrals(aug.states, starts, ends)
        return WeightingEvidence("integral", integrals=-(1 + a) * ex - b * (ends - starts))
    a, b = psi.coefficients(omega)
    sup, inf = kernel.exit_bounds(aug.states)
    lowest = omega - (1 + a) * sup - b
    if np.any(lowest < -1e-9 * omega):
        raise InvariantViolation("negative compensating rate")
    if variant == "stationary":
        if not kernel.homogeneous:
            raise ValueError("the stationary variant needs a time-homogeneous kernel")
        rate = np.maximum(omega - (1 + a) * kernel.exit_rates(aug.states, 0.0) - b, 0.0)
        return WeightingEvidence("counts", counts=rng.poisson(rate * (ends - starts)))
    bound = np.maximum(omega - (1 + a) * inf - b, 0.0)
    owner, t = _poisson_points(starts, ends, bound, rng)
    if len(t) and not kernel.homogeneous:
        rate = omega - (1 + a) * kernel.exit_rates(aug.states[owner], t) - b
        keep = rng.random(len(t)) * bound[owner] < rate
        owner, t = owner[keep], t[keep]
    order = np.lexsort((t, owner))
    owner, t = owner[order], t[order]
    ptr = np.searchsorted(owner, np.arange(aug.n_epochs + 1))
    return WeightingEvidence("times", times=t, pointers=ptr.astype(np.int64))


# -- constraints --------------------------------------------------------------

def _base_constraints(aug, kernel, init, observations, config, rng, center, stats=None):
    space = kernel.space
    M = aug.n_epochs
    cons = full_constraints(M, space)
    cons.lo[0] = np.maximum(cons.lo[0], init.states.min(axis=0))
    cons.hi[0] = np.minimum(cons.hi[0], init.states.max(axis=0))
    for obs in observations:
        cons = cons.intersect(obs.epoch_constraints(aug.times, space))
    env = config.envelope
    if env is not None:
        if center is None:
            raise ValueError("envelopes need a mean path")
        xi = center(aug.times)
        if isinstance(env, NormalEnvelopeParams):
            e = draw_normal_envelope(aug, xi, env, rng)
            cons = cons.intersect(normal_constraints(e, space))
        else:
            e = draw_gamma_envelope(aug, xi, env, rng, kernel.max_step)
            cons = cons.intersect(gamma_constraints(e, space, M, kernel.max_step,
                                                    (cons.lo[0], cons.hi[0])))
    if config.split is not None:
        split, idx = apply_split(aug, config.split, space, rng)
        cons = cons.intersect(split)
        if stats is not None:
            # pinned epochs, for checking that the new path honors them
            stats["split_times"] = aug.times[idx]
            stats["split_states"] = aug.states[idx]
    return cons


def _detection(kernel, observations) -> np.ndarray:
    p = np.zeros(kernel.n_channels)
    for obs in observations:
        q = obs.detection_probabilities(kernel)
        if q is not None:
            p = np.maximum(p, q)
    return p


def _shift(arr, k):
    if k == 0 or arr is None:
        return arr
    out = np.zeros_like(arr)
    if k > 0:
        out[k:] = arr[:-k]
    else:
        out[:k] = arr[-k:]
    return out


# -- reference construction ---------------------------------------------------

def build_epoch_steps(aug: AugmentedTrajectory, evidence: WeightingEvidence, config: SamplerConfig,
                      kernel: RateKernel, omega: float | None, constraints: Constraints | None = None,
                      detection=None, locked_weighting: bool = False) -> list[EpochStep]:
    """Explicit supports, weights and transition matrices for each epoch.

    With ``locked_weighting`` every weighting time becomes a locked epoch
    carrying its own factor instead of being folded into its host epoch.
    """
    a, b = config.psi.coefficients(omega)
    M = aug.n_epochs
    space = kernel.space
    if constraints is None:
        constraints = full_constraints(M, space)
    lo, hi = constraints.lo, constraints.hi
    ew, ew_off = assemble_terms(lo, hi, constraints.terms)
    p = np.zeros(kernel.n_channels) if detection is None else np.asarray(detection, float)
    starts = aug.times
    ends = np.append(aug.times[1:], aug.horizon)
    steps: list[EpochStep] = []

    def exit_at(states, t):
        return kernel.exit_rates(states, np.broadcast_to(t, (len(states),)))

    def with_factor(lw, f):
        with np.errstate(divide="ignore"):
            return lw + np.where(f > 0, np.log(np.where(f > 0, f, 1.0)), -np.inf)

    for i in range(M):
        support = box_states(lo[i], hi[i])
        lw = np.zeros(len(support))
        for c in range(space.dimension):
            lw += ew[ew_off[i, c] + support[:, c] - lo[i, c]]
        trailing = []
        if evidence.kind == "integral":
            ex = kernel.exit_integrals(support, starts[i], ends[i])
            lw += -(1 + a) * ex - b * (ends[i] - starts[i])
        elif evidence.kind == "counts":
            f = 1 - ((1 + a) * exit_at(support, starts[i]) + b) / omega
            k = evidence.counts[i]
            if k > 0:
                lw = with_factor(lw, f**k)
        else:
            for s in evidence.times[evidence.pointers[i]:evidence.pointers[i + 1]]:
                f = 1 - ((1 + a) * exit_at(support, s) + b) / omega
                if locked_weighting:
                    trailing.append(with_factor(np.zeros(len(support)), f))
                else:
                    lw = with_factor(lw, f)
        if i == 0:
            steps.append(EpochStep(support, lw))
        else:
            prev = steps[-1].support
            steps.append(EpochStep(support, lw, _transition_matrix(kernel, prev, support, starts[i], a, b,
                                                                   aug.tags[i] >= 0, p)))
        for tw in trailing:
            steps.append(EpochStep(support, tw, locked=True))
    return steps


def _transition_matrix(kernel, prev, cur, t, a, b, tagged, p):
    space = kernel.space
    n_prev, n_cur = len(prev), len(cur)
    key_cur = space.encode(cur)
    order = np.argsort(key_cur)
    props = kernel.propensities(prev, t)
    rows, cols, vals = [], [], []

    def locate(states):
        inside = space.contains(states)
        keys = np.full(len(states), -1)
        keys[inside] = space.encode(states[inside])
        pos = np.searchsorted(key_cur[order], keys)
        pos = np.minimum(pos, n_cur - 1)
        hit = inside & (key_cur[order][pos] == keys)
        return hit, order[pos]

    if not tagged:
        diag = a * props.sum(axis=1) + b
        hit, col = locate(prev)
        m = hit & (diag > 0)
        rows.append(np.nonzero(m)[0])
        cols.append(col[m])
        vals.append(diag[m])
    for j in range(kernel.n_channels):
        w = props[:, j] * (p[j] if tagged else 1 - p[j])
        hit, col = locate(prev + kernel.stoichiometry[j])
        m = hit & (w > 0)
        rows.append(np.nonzero(m)[0])
        cols.append(col[m])
        vals.append(w[m])
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n_prev, n_cur))


# -- resampling ---------------------------------------------------------------

def _engine_inputs(aug, evidence, kernel, config, omega, cons, detection):
    space = kernel.space
    a, b = config.psi.coefficients(omega)
    M = aug.n_epochs
    starts = aug.times
    ends = np.append(starts[1:], aug.horizon)
    rt = kernel.season_values(starts)
    dR = np.zeros((M, kernel.n_channels))
    counts = np.zeros(M)
    wptr = np.zeros(M + 1, dtype=np.int64)
    wr = np.zeros((0, kernel.n_channels))
    kind = config.kind
    if evidence.kind == "integral":
        dR = kernel.season_integrals(starts, ends)
    elif evidence.kind == "counts":
        counts = evidence.counts.astype(float)
    else:
        wptr = evidence.pointers
        wr = kernel.season_values(evidence.times).reshape(-1, kernel.n_channels)
    k = config.weight_offset
    if k:
        dR, counts = _shift(dR, k), _shift(counts, k)
        ends = starts + _shift(ends - starts, k)
        if kind == 1:
            sizes = _shift(np.diff(wptr), k)
            wptr = np.concatenate(([0], np.cumsum(sizes)))
    return dict(rt=rt, psi_a=float(a), psi_b=float(b), kind=kind, omega=float(omega or 1.0),
                counts=counts, dR=dR, dt=ends - starts, wptr=wptr, wr=np.ascontiguousarray(wr))


def _strides(space):
    shape = np.asarray(space.shape, dtype=np.int64)
    return np.concatenate((np.cumprod(shape[::-1])[::-1][1:], [1])).astype(np.int64)


def _run_compiled(aug, evidence, kernel, init, config, omega, cons, detection, rng, stats):
    space = kernel.space
    lo, hi = cons.lo.copy(), cons.hi.copy()
    bad = _engine.prune_boxes(lo, hi, kernel.stoichiometry, aug.tags, detection)
    if bad >= 0:
        raise InfeasibleError(bad)
    ew, ew_off = assemble_terms(lo, hi, cons.terms)
    inputs = _engine_inputs(aug, evidence, kernel, config, omega, cons, detection)
    log_pi0 = init.log_prob(box_states(lo[0], hi[0]))
    u = rng.random(aug.n_epochs)
    budget = int(config.memory_budget // 8)
    states, status, epoch, log_ev, ops, _, _ = _engine.ffbs_boxes(
        lo, hi, space.lower_array, _strides(space), kernel.structure_table, kernel.rates,
        kernel.stoichiometry, inputs["rt"], inputs["psi_a"], inputs["psi_b"], aug.tags, detection,
        inputs["kind"], inputs["omega"], inputs["counts"], inputs["dR"], inputs["dt"],
        inputs["wptr"], inputs["wr"], ew, ew_off, log_pi0, u, budget)
    if status == _engine.OVER_BUDGET:
        need = int(np.prod(hi - lo + 1, axis=1).sum()) * 8
        raise MemoryBudgetExceeded(f"filter needs {need} bytes, budget {int(config.memory_budget)}")
    if status == _engine.INFEASIBLE:
        raise InfeasibleError(epoch)
    stats["ops"] = stats.get("ops", 0) + int(ops)
    stats["log_evidence"] = float(log_ev)
    return states


def _run_reference(aug, evidence, kernel, init, config, omega, cons, detection, rng, stats):
    lo, hi = cons.lo.copy(), cons.hi.copy()
    bad = _engine.prune_boxes(lo, hi, kernel.stoichiometry, aug.tags, detection)
    if bad >= 0:
        raise InfeasibleError(bad)
    need = int(np.prod(hi - lo + 1, axis=1).sum()) * 8
    if need > config.memory_budget:
        raise MemoryBudgetExceeded(f"filter needs {need} bytes, budget {int(config.memory_budget)}")
    if config.weight_offset:
        raise NotImplementedError("weight mutation is only wired into the compiled engine")
    steps = build_epoch_steps(aug, evidence, config, kernel, omega, Constraints(lo, hi, cons.terms),
                              detection)
    filt = forward_filter(steps, init)
    stats["ops"] = stats.get("ops", 0) + filt.operations
    stats["log_evidence"] = filt.log_evidence
    return backward_sample(filt, steps, rng)


def resample_trajectory(path: Trajectory, kernel: RateKernel, init: InitialDistribution,
                        config: SamplerConfig, rng, observations: Sequence = (),
                        center: Callable | None = None, stats: dict | None = None) -> Trajectory:
    """One auxiliary-variable update of the latent path.

    Infeasible constraint draws are retried up to ``config.max_retries`` times
    (only meaningful when an envelope or split is random); exhausting the
    budget re-raises :class:`InfeasibleError`.
    """
    stats = {} if stats is None else stats
    omega = resolve_omega(kernel, config)
    aug = sample_candidate_times(path, kernel, config.psi, rng, omega)
    evidence = sample_compensation(aug, kernel, omega, config.psi, rng, config.variant)
    detection = _detection(kernel, observations)
    run = _run_compiled if config.engine == "compiled" else _run_reference
    randomized = config.envelope is not None or config.split is not None
    attempts = config.max_retries + 1 if randomized else 1
    stats["retries"] = 0
    for attempt in range(attempts):
        cons = _base_constraints(aug, kernel, init, observations, config, rng, center, stats)
        try:
            bad = cons.empty_epoch()
            if bad >= 0:
                raise InfeasibleError(bad)
            states = run(aug, evidence, kernel, init, config, omega, cons, detection, rng, stats)
            break
        except InfeasibleError as err:
            stats["retries"] += 1
            if attempt == attempts - 1:
                raise InfeasibleError(err.epoch, f"no feasible constraint draw after {attempts} "
                                      f"attempts (last failure at epoch {err.epoch})") from err
    stats["epochs"] = aug.n_epochs
    stats["support"] = int(np.prod(cons.hi - cons.lo + 1, axis=1).sum())
    new = _unchecked(AugmentedTrajectory, aug.times, states, aug.horizon, aug.tags)
    return strip_virtual(new)


def gibbs_sweep(chain: ChainState, model, config: SamplerConfig, observations: Sequence, rng) -> ChainState:
    """Resample the path given parameters, then parameters given the path."""
    start = _time.perf_counter()
    stats: dict = {}
    kernel = model.kernel(chain.params)
    obs = model.observations_for(chain, observations)
    path = resample_trajectory(chain.path, kernel, model.initial, config, rng, obs,
                               model.envelope_center(chain), stats)
    new = ChainState(path, np.array(chain.params), chain.sweep + 1, chain.t0, stats)
    try:
        new = model.update_parameters(new, rng)
    except (ValueError, FloatingPointError) as err:
        raise RuntimeError(f"parameter update failed for {model.param_names}: {err}") from err
    stats["seconds"] = _time.perf_counter() - start
    return new
