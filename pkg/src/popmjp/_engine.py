"""Compiled forward filtering / backward sampling on box-shaped supports.

Epoch ``i`` keeps a dense vector over the integer box ``lo[i] <= x <= hi[i]``
(row-major, last coordinate fastest).  Transitions are generated from the
reaction structure instead of stored matrices, so each epoch costs
``O(|box_{i-1}| * (J + 1))``.

Per-state log weights combine

* a compensation term selected by ``kind``
  (0 none, 1 weighting times, 2 Poisson counts, 3 integrated rate),
* separable extras ``ew`` given per epoch and coordinate
  (observation likelihoods and envelope factors).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
INFEASIBLE = 1
OVER_BUDGET = 2


@njit(cache=True)
def prune_boxes(lo, hi, nu, tags, detect):
    """Shrink boxes to forward/backward reachable hulls in place.

    Returns the first epoch whose box becomes empty, or ``-1``.
    """
    M, d = lo.shape
    J = nu.shape[0]
    step_lo = np.zeros((2, d), dtype=np.int64)
    step_hi = np.zeros((2, d), dtype=np.int64)
    # row 0: untagged epochs (diagonal allowed), row 1: tagged epochs
    for c in range(d):
        step_lo[1, c] = 1 << 40
        step_hi[1, c] = -(1 << 40)
    for j in range(J):
        for c in range(d):
            v = nu[j, c]
            if detect[j] < 1.0:
                step_lo[0, c] = min(step_lo[0, c], v)
                step_hi[0, c] = max(step_hi[0, c], v)
            if detect[j] > 0.0:
                step_lo[1, c] = min(step_lo[1, c], v)
                step_hi[1, c] = max(step_hi[1, c], v)
    for i in range(1, M):
        r = 1 if tags[i] >= 0 else 0
        for c in range(d):
            a = lo[i - 1, c] + step_lo[r, c]
            b = hi[i - 1, c] + step_hi[r, c]
            if a > lo[i, c]:
                lo[i, c] = a
            if b < hi[i, c]:
                hi[i, c] = b
            if lo[i, c] > hi[i, c]:
                return i
    for i in range(M - 1, 0, -1):
        r = 1 if tags[i] >= 0 else 0
        for c in range(d):
            a = lo[i, c] - step_hi[r, c]
            b = hi[i, c] - step_lo[r, c]
            if a > lo[i - 1, c]:
                lo[i - 1, c] = a
            if b < hi[i - 1, c]:
                hi[i - 1, c] = b
            if lo[i - 1, c] > hi[i - 1, c]:
                return i - 1
    return -1


@njit(cache=True, inline='always')
def _global_index(x, space_lo, strides):
    g = 0
    for c in range(x.shape[0]):
        g += (x[c] - space_lo[c]) * strides[c]
    return g


@njit(cache=True, inline='always')
def _local_index(x, lo_i, hi_i):
    """Row-major offset of ``x`` in the box, or ``-1`` if outside."""
    k = 0
    for c in range(x.shape[0]):
        if x[c] < lo_i[c] or x[c] > hi_i[c]:
            return -1
        k = k * (hi_i[c] - lo_i[c] + 1) + (x[c] - lo_i[c])
    return k


@njit(cache=True, inline='always')
def _advance(x, lo_i, hi_i):
    """Odometer increment over the box (last coordinate fastest)."""
    c = x.shape[0] - 1
    while c >= 0:
        x[c] += 1
        if x[c] <= hi_i[c]:
            return
        x[c] = lo_i[c]
        c -= 1


@njit(cache=True)
def ffbs_boxes(lo, hi, space_lo, strides, H, theta, nu, rt, psi_a, psi_b, tags, detect,
               kind, omega, counts, dR, dt, wptr, wr, ew, ew_off, log_pi0, uniforms,
               budget):
    """Filter forward and draw one state sequence backward.

    Returns ``(states, status, epoch, log_evidence, ops, alpha, offsets)``.
    """
    M, d = lo.shape
    J = theta.shape[0]
    states = np.zeros((M, d), dtype=np.int64)
    sizes = np.ones(M, dtype=np.int64)
    for i in range(M):
        for c in range(d):
            sizes[i] *= hi[i, c] - lo[i, c] + 1
    offsets = np.zeros(M + 1, dtype=np.int64)
    for i in range(M):
        offsets[i + 1] = offsets[i] + sizes[i]
    if offsets[M] > budget:
        return states, OVER_BUDGET, -1, 0.0, 0, np.zeros(0), offsets
    alpha = np.zeros(offsets[M])
    x = np.empty(d, dtype=np.int64)
    y = np.empty(d, dtype=np.int64)
    log_ev = 0.0
    ops = 0

    # epoch 0
    for c in range(d):
        x[c] = lo[0, c]
    mx = -np.inf
    for k in range(sizes[0]):
        g = _global_index(x, space_lo, strides)
        lp = log_pi0[k]
        v = -np.inf
        if lp > -np.inf:
            # compensation and separable extras, written inline for speed
            v = 0.0
            if kind == 3:
                s = 0.0
                for j in range(J):
                    s += theta[j] * H[g, j] * dR[0, j]
                v = -(1.0 + psi_a) * s - psi_b * dt[0]
            elif kind == 2:
                if counts[0] > 0:
                    e = 0.0
                    for j in range(J):
                        e += theta[j] * H[g, j] * rt[0, j]
                    f = 1.0 - ((1.0 + psi_a) * e + psi_b) / omega
                    v = counts[0] * math.log(f) if f > 0.0 else -np.inf
            elif kind == 1:
                for s_ in range(wptr[0], wptr[0 + 1]):
                    e = 0.0
                    for j in range(J):
                        e += theta[j] * H[g, j] * wr[s_, j]
                    f = 1.0 - ((1.0 + psi_a) * e + psi_b) / omega
                    v += math.log(f) if f > 0.0 else -np.inf
            for c in range(d):
                off = ew_off[0, c]
                if off >= 0:
                    v += ew[off + x[c] - lo[0, c]]
            v += lp
        alpha[k] = v
        if v > mx:
            mx = v
        _advance(x, lo[0], hi[0])
    if mx == -np.inf:
        return states, INFEASIBLE, 0, 0.0, ops, alpha, offsets
    tot = 0.0
    for k in range(sizes[0]):
        a = math.exp(alpha[k] - mx) if alpha[k] > -np.inf else 0.0
        alpha[k] = a
        tot += a
    for k in range(sizes[0]):
        alpha[k] /= tot
    log_ev += mx + math.log(tot)

    lwb = np.empty(sizes.max())
    rate = np.empty(J)
    prob = np.empty(J)
    shift = np.empty(J, dtype=np.int64)
    lstride = np.empty(d, dtype=np.int64)
    for i in range(1, M):
        p0 = offsets[i - 1]
        p1 = offsets[i]
        tagged = tags[i] >= 0
        for j in range(J):
            rate[j] = theta[j] * rt[i, j]
            prob[j] = detect[j] if tagged else 1.0 - detect[j]
        # local row-major strides of box i and per-channel index shifts
        st = 1
        for c in range(d - 1, -1, -1):
            lstride[c] = st
            st *= hi[i, c] - lo[i, c] + 1
        for j in range(J):
            sh = 0
            for c in range(d):
                sh += nu[j, c] * lstride[c]
            shift[j] = sh
        for c in range(d):
            x[c] = lo[i - 1, c]
        g = _global_index(x, space_lo, strides)
        for k in range(sizes[i - 1]):
            a = alpha[p0 + k]
            if a > 0.0:
                inside = True
                kk = 0
                for c in range(d):
                    if x[c] < lo[i, c] or x[c] > hi[i, c]:
                        inside = False
                    kk += (x[c] - lo[i, c]) * lstride[c]
                if not tagged and inside:
                    e = 0.0
                    for j in range(J):
                        e += rate[j] * H[g, j]
                    w = psi_a * e + psi_b
                    if w > 0.0:
                        alpha[p1 + kk] += a * w
                        ops += 1
                for j in range(J):
                    w = rate[j] * H[g, j] * prob[j]
                    if w > 0.0:
                        ok = True
                        for c in range(d):
                            yc = x[c] + nu[j, c]
                            if yc < lo[i, c] or yc > hi[i, c]:
                                ok = False
                                break
                        if ok:
                            alpha[p1 + kk + shift[j]] += a * w
                            ops += 1
            # odometer step, tracking the global index
            c = d - 1
            while c >= 0:
                x[c] += 1
                g += strides[c]
                if x[c] <= hi[i - 1, c]:
                    break
                g -= strides[c] * (x[c] - lo[i - 1, c])
                x[c] = lo[i - 1, c]
                c -= 1
        # weights in the linear domain, shifted by the epoch maximum
        for c in range(d):
            x[c] = lo[i, c]
        mx = -np.inf
        for k in range(sizes[i]):
            v = -np.inf
            if alpha[p1 + k] > 0.0:
                g = _global_index(x, space_lo, strides)
                v = 0.0
                if kind == 3:
                    s = 0.0
                    for j in range(J):
                        s += theta[j] * H[g, j] * dR[i, j]
                    v = -(1.0 + psi_a) * s - psi_b * dt[i]
                elif kind == 2:
                    if counts[i] > 0:
                        e = 0.0
                        for j in range(J):
                            e += theta[j] * H[g, j] * rt[i, j]
                        f = 1.0 - ((1.0 + psi_a) * e + psi_b) / omega
                        v = counts[i] * math.log(f) if f > 0.0 else -np.inf
                elif kind == 1:
                    for s_ in range(wptr[i], wptr[i + 1]):
                        e = 0.0
                        for j in range(J):
                            e += theta[j] * H[g, j] * wr[s_, j]
                        f = 1.0 - ((1.0 + psi_a) * e + psi_b) / omega
                        v += math.log(f) if f > 0.0 else -np.inf
                for c in range(d):
                    off = ew_off[i, c]
                    if off >= 0:
                        v += ew[off + x[c] - lo[i, c]]
                if v > mx:
                    mx = v
            lwb[k] = v
            _advance(x, lo[i], hi[i])
        if mx == -np.inf:
            return states, INFEASIBLE, i, 0.0, ops, alpha, offsets
        tot = 0.0
        for k in range(sizes[i]):
            v = lwb[k]
            if v != mx:
                alpha[p1 + k] *= math.exp(v - mx)
            tot += alpha[p1 + k]
        for k in range(sizes[i]):
            alpha[p1 + k] /= tot
        log_ev += mx + math.log(tot)

    # backward pass
    last = offsets[M - 1]
    u = uniforms[M - 1]
    acc = 0.0
    pick = sizes[M - 1] - 1
    for k in range(sizes[M - 1]):
        acc += alpha[last + k]
        if acc > u:
            pick = k
            break
    while alpha[last + pick] == 0.0 and pick > 0:
        pick -= 1
    rem = pick
    for c in range(d - 1, -1, -1):
        w_c = hi[M - 1, c] - lo[M - 1, c] + 1
        states[M - 1, c] = lo[M - 1, c] + rem % w_c
        rem //= w_c
    cand = np.empty((J + 1, d), dtype=np.int64)
    cw = np.empty(J + 1)
    for i in range(M - 1, 0, -1):
        tagged = tags[i] >= 0
        p0 = offsets[i - 1]
        n = 0
        total = 0.0
        if not tagged:
            kk = _local_index(states[i], lo[i - 1], hi[i - 1])
            if kk >= 0 and alpha[p0 + kk] > 0.0:
                g = _global_index(states[i], space_lo, strides)
                e = 0.0
                for j in range(J):
                    e += theta[j] * H[g, j] * rt[i, j]
                w = (psi_a * e + psi_b) * alpha[p0 + kk]
                if w > 0.0:
                    for c in range(d):
                        cand[n, c] = states[i, c]
                    cw[n] = w
                    total += w
                    n += 1
        for j in range(J):
            pj = detect[j] if tagged else 1.0 - detect[j]
            if pj <= 0.0:
                continue
            for c in range(d):
                y[c] = states[i, c] - nu[j, c]
            kk = _local_index(y, lo[i - 1], hi[i - 1])
            if kk < 0 or alpha[p0 + kk] <= 0.0:
                continue
            g = _global_index(y, space_lo, strides)
            w = theta[j] * H[g, j] * rt[i, j] * pj * alpha[p0 + kk]
            if w > 0.0:
                for c in range(d):
                    cand[n, c] = y[c]
                cw[n] = w
                total += w
                n += 1
        u = uniforms[i - 1] * total
        acc = 0.0
        pick = n - 1
        for q in range(n):
            acc += cw[q]
            if acc > u:
                pick = q
                break
        for c in range(d):
            states[i - 1, c] = cand[pick, c]
    return states, OK, -1, log_ev, ops, alpha, offsets
