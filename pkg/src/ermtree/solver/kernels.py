"""Compiled inner loops for the one- and two-dimensional exact solvers.

Leaf costs are total losses.  Squared-loss statistics are centred on the
global response mean before accumulation; ``mu`` restores the offset when
a leaf mean has to be clipped to ``[-M, M]``.
"""

import numpy as np
from numba import njit

SQUARED = 0
ZERO_ONE = 1


@njit(cache=True)
def leaf_cost(kind, cnt, s, q, M, mu):
    # s, q: sum and sum of squares of centred responses (zero-one: s = #ones)
    if kind == ZERO_ONE:
        return min(s, cnt - s)
    base = q - s * s / cnt
    if base < 0.0:
        base = 0.0
    mean = mu + s / cnt
    if mean > M:
        gap = s / cnt - (M - mu)
        base += cnt * gap * gap
    elif mean < -M:
        gap = s / cnt - (-M - mu)
        base += cnt * gap * gap
    return base


# ---------------------------------------------------------------------------
# one dimension: optimal segmentation of ordered units


@njit(cache=True)
def seg_frontier(kind, cnt, s, q, M, mu, L):
    """Frontier over ``L`` budgets for the ordered units ``0..k-1``.

    Returns ``F`` with ``F[t, l]`` the least total loss of units ``0..t-1``
    using at most ``l + 1`` segments, and ``arg[t, l]`` the start of the
    last segment (``-1`` when fewer segments already achieve the value).
    """
    k = cnt.shape[0]
    F = np.full((k + 1, L), np.inf)
    arg = np.full((k + 1, L), -1, dtype=np.int64)
    F[0, :] = 0.0
    for t in range(1, k + 1):
        c_acc = 0.0
        s_acc = 0.0
        q_acc = 0.0
        for sidx in range(t - 1, -1, -1):
            c_acc += cnt[sidx]
            s_acc += s[sidx]
            q_acc += q[sidx]
            c = leaf_cost(kind, c_acc, s_acc, q_acc, M, mu)
            if sidx == 0:
                F[t, 0] = c
                arg[t, 0] = 0
                continue
            for l in range(1, L):
                prev = F[sidx, l - 1]
                if prev == np.inf:
                    break
                cand = prev + c
                if cand <= F[t, l]:
                    F[t, l] = cand
                    arg[t, l] = sidx
        # fewer segments win ties
        for l in range(1, L):
            if F[t, l - 1] <= F[t, l]:
                F[t, l] = F[t, l - 1]
                arg[t, l] = -1
    return F, arg


@njit(cache=True)
def seg_penalized(kind, cnt, s, q, M, mu, pen):
    """Least ``total loss + pen * #segments`` over all segmentations."""
    k = cnt.shape[0]
    P = np.full(k + 1, np.inf)
    nseg = np.zeros(k + 1, dtype=np.int64)
    arg = np.zeros(k + 1, dtype=np.int64)
    P[0] = 0.0
    for t in range(1, k + 1):
        c_acc = 0.0
        s_acc = 0.0
        q_acc = 0.0
        for sidx in range(t - 1, -1, -1):
            c_acc += cnt[sidx]
            s_acc += s[sidx]
            q_acc += q[sidx]
            cand = P[sidx] + leaf_cost(kind, c_acc, s_acc, q_acc, M, mu) + pen
            if cand < P[t] or (cand == P[t] and nseg[sidx] + 1 <= nseg[t]):
                P[t] = cand
                nseg[t] = nseg[sidx] + 1
                arg[t] = sidx
    return P, nseg, arg


# ---------------------------------------------------------------------------
# two dimensions: rectangles in rank space


@njit(cache=True)
def _pair_index(a, b, n):
    # index of the interval [a, b] (a <= b) among all intervals of 0..n-1
    return a * n - (a * (a - 1)) // 2 + (b - a)


@njit(cache=True)
def _rect_sum(P, a0, b0, a1, b1):
    return P[b0 + 1, b1 + 1] - P[a0, b1 + 1] - P[b0 + 1, a1] + P[a0, a1]


@njit(cache=True)
def rect_frontier(kind, C, S, Q, M, mu, L):
    """Frontier of every rank rectangle of a two-dimensional sample.

    ``C``, ``S``, ``Q`` are ``(n0+1, n1+1)`` inclusive prefix sums of the
    per-rank-pair counts, (centred) response sums and squared sums.
    Returns ``V[p0, p1, l]``: least loss with at most ``l + 1`` leaves for
    the rectangle whose rank intervals have pair indices ``p0``, ``p1``.
    """
    n0 = C.shape[0] - 1
    n1 = C.shape[1] - 1
    V = np.zeros((n0 * (n0 + 1) // 2, n1 * (n1 + 1) // 2, L))
    tmp = np.empty(L)
    for w0 in range(n0):
        for w1 in range(n1):
            for a0 in range(n0 - w0):
                b0 = a0 + w0
                p0 = _pair_index(a0, b0, n0)
                for a1 in range(n1 - w1):
                    b1 = a1 + w1
                    p1 = _pair_index(a1, b1, n1)
                    cnt = _rect_sum(C, a0, b0, a1, b1)
                    if cnt == 0:
                        continue
                    leaf = leaf_cost(kind, cnt, _rect_sum(S, a0, b0, a1, b1),
                                     _rect_sum(Q, a0, b0, a1, b1), M, mu)
                    for l in range(L):
                        tmp[l] = leaf
                    if L > 1:
                        # dimension 0
                        for kk in range(a0, b0):
                            col = _rect_sum(C, kk, kk, a1, b1)
                            if col == 0:
                                continue
                            nl = _rect_sum(C, a0, kk, a1, b1)
                            nr = cnt - nl
                            if nr == 0:
                                break
                            pl = _pair_index(a0, kk, n0)
                            pr = _pair_index(kk + 1, b0, n0)
                            _combine(V[pl, p1], V[pr, p1], nl, nr, tmp, L)
                        # dimension 1
                        for kk in range(a1, b1):
                            row = _rect_sum(C, a0, b0, kk, kk)
                            if row == 0:
                                continue
                            nl = _rect_sum(C, a0, b0, a1, kk)
                            nr = cnt - nl
                            if nr == 0:
                                break
                            pl = _pair_index(a1, kk, n1)
                            pr = _pair_index(kk + 1, b1, n1)
                            _combine(V[p0, pl], V[p0, pr], nl, nr, tmp, L)
                    for l in range(L):
                        V[p0, p1, l] = tmp[l]
    return V


@njit(cache=True)
def _combine(vl, vr, nl, nr, out, L):
    # out[l] = min(out[l], min_{a+b=l+2} vl[a-1] + vr[b-1]); giving the left
    # child more leaves than points is dominated by a = nl
    for l in range(1, L):
        total = l + 1
        amax = min(total - 1, int(nl))
        for a in range(1, amax + 1):
            cand = vl[a - 1] + vr[total - a - 1]
            if cand < out[l]:
                out[l] = cand
