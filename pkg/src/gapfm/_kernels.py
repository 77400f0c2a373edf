"""Compiled inner loops for training.

Factor matrices arrive as C-contiguous row views (``Ut`` is M x D, ``Vt`` is
N x D).  All kernels release the GIL so phase-1 shards can run on threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ADAPTIVE = 0
RANDOM = 1
ADAPTIVE_TIERED = 2


@njit(inline="always")
def _g(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(nogil=True, cache=True)
def _scores(m, s, e, items, Ut, Vt, f):
    D = Ut.shape[1]
    for a in range(e - s):
        i = items[s + a]
        acc = 0.0
        for d in range(D):
            acc += Ut[m, d] * Vt[i, d]
        f[a] = acc


@njit(nogil=True, cache=True)
def user_ascent(users, indptr, items, grades, table, Ut_old, Vt, reg, rate, Ut_new):
    """Write ``U_m + rate * dF/dU_m`` into ``Ut_new`` for every listed user.

    Reads only ``Ut_old`` and ``Vt``, so disjoint user lists may run
    concurrently and produce identical bits regardless of sharding.
    """
    D = Ut_old.shape[1]
    smax = 0
    for m in users:
        smax = max(smax, indptr[m + 1] - indptr[m])
    f = np.empty(smax)
    gf = np.empty(smax)
    coef = np.empty(smax)
    grad = np.empty(D)
    for m in users:
        s = indptr[m]
        e = indptr[m + 1]
        S = e - s
        _scores(m, s, e, items, Ut_old, Vt, f)
        for a in range(S):
            gf[a] = _g(f[a])
            coef[a] = 0.0
        for a in range(S):
            ya = grades[s + a]
            inner = 0.0
            for b in range(S):
                yb = grades[s + b]
                w = table[ya] if ya < yb else table[yb]
                gx = _g(f[b] - f[a])
                inner += w * gx
                # pair term weight, multiplies (V_b - V_a)
                t = gf[a] * w * gx * (1.0 - gx)
                coef[b] += t
                coef[a] -= t
            coef[a] += gf[a] * (1.0 - gf[a]) * inner
        for d in range(D):
            grad[d] = -reg * Ut_old[m, d]
        for a in range(S):
            i = items[s + a]
            c = coef[a]
            for d in range(D):
                grad[d] += c * Vt[i, d]
        for d in range(D):
            Ut_new[m, d] = Ut_old[m, d] + rate * grad[d]


@njit(nogil=True, cache=True)
def _ordinal_desc(values, out_rank):
    # 1-based ranks by descending value; stable, so ties keep position order
    order = np.argsort(-values, kind="mergesort")
    for r in range(len(values)):
        out_rank[order[r]] = r + 1


@njit(nogil=True, cache=True)
def _tier_gap(grades_s, S, a, pred_rank):
    # distance from pred_rank to the rank span of a's grade tier
    above = 0
    tied = 0
    for b in range(S):
        if grades_s[b] > grades_s[a]:
            above += 1
        elif grades_s[b] == grades_s[a]:
            tied += 1
    lo = above + 1
    hi = above + tied
    if pred_rank < lo:
        return lo - pred_rank
    if pred_rank > hi:
        return pred_rank - hi
    return 0


@njit(nogil=True, cache=True)
def select_positions(f, grades_s, S, k, mode, keys):
    """Positions (into the user's rated-item slice) chosen for the item update.

    Adaptive mode picks the ``k`` largest ``|grade rank - score rank|``
    gaps, ties to the lower position.  Tiered mode measures the gap from the
    score rank to the span of ranks the item's grade tier occupies, so
    reordering within a tier costs nothing.  Random mode picks the ``k``
    smallest ``keys``.  Returns ``(positions, dist)``; ``dist`` is zero in random mode.
    """
    dist = np.zeros(S)
    if k >= S:
        return np.arange(S), dist
    if mode == RANDOM:
        order = np.argsort(keys[:S], kind="mergesort")
        return np.sort(order[:k]), dist
    rh = np.empty(S, np.int64)
    _ordinal_desc(f[:S], rh)
    if mode == ADAPTIVE:
        r = np.empty(S, np.int64)
        gvals = np.empty(S)
        for a in range(S):
            gvals[a] = grades_s[a]
        _ordinal_desc(gvals, r)
        for a in range(S):
            dist[a] = abs(r[a] - rh[a])
    else:
        for a in range(S):
            dist[a] = _tier_gap(grades_s, S, a, rh[a])
    order = np.argsort(-dist, kind="mergesort")
    return np.sort(order[:k]), dist


@njit(nogil=True, cache=True)
def item_phase(order, indptr, items, grades, table, Ut, Vt, reg, rate, k, mode, keys):
    """Sequential item updates, one user at a time in ``order``.

    For each user the selected items' gradients are computed against the
    current factors and then applied together.  ``k < 0`` means every rated
    item.  Returns the number of item gradients evaluated.
    """
    D = Ut.shape[1]
    smax = 0
    for m in range(len(indptr) - 1):
        smax = max(smax, indptr[m + 1] - indptr[m])
    f = np.empty(smax)
    gf = np.empty(smax)
    step = np.empty((smax, D))
    count = 0
    for m in order:
        s = indptr[m]
        e = indptr[m + 1]
        S = e - s
        if S == 0:
            continue
        _scores(m, s, e, items, Ut, Vt, f)
        kk = S if k < 0 else min(k, S)
        sel, _ = select_positions(f, grades[s:e], S, kk, mode, keys[s:e])
        for a in range(S):
            gf[a] = _g(f[a])
        for q in range(kk):
            a = sel[q]
            ya = grades[s + a]
            inner = 0.0
            pair = 0.0
            for b in range(S):
                yb = grades[s + b]
                w = table[ya] if ya < yb else table[yb]
                gx = _g(f[b] - f[a])
                inner += w * gx
                pair += w * (gf[b] - gf[a]) * gx * (1.0 - gx)
            c = gf[a] * (1.0 - gf[a]) * inner + pair
            i = items[s + a]
            for d in range(D):
                step[q, d] = rate * (c * Ut[m, d] - reg * Vt[i, d])
        for q in range(kk):
            i = items[s + sel[q]]
            for d in range(D):
                Vt[i, d] += step[q, d]
        count += kk
    return count


@njit(nogil=True, cache=True)
def smoothed_total(indptr, items, grades, table, Ut, Vt):
    """Sum of per-user smoothed GAP (no normaliser, no penalty)."""
    smax = 0
    for m in range(len(indptr) - 1):
        smax = max(smax, indptr[m + 1] - indptr[m])
    f = np.empty(smax)
    total = 0.0
    for m in range(len(indptr) - 1):
        s = indptr[m]
        e = indptr[m + 1]
        S = e - s
        _scores(m, s, e, items, Ut, Vt, f)
        for a in range(S):
            ya = grades[s + a]
            inner = 0.0
            for b in range(S):
                yb = grades[s + b]
                w = table[ya] if ya < yb else table[yb]
                inner += w * _g(f[b] - f[a])
            total += _g(f[a]) * inner
    return total
