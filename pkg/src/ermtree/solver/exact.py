"""Exact empirical risk minimization over valid tree-based partitions.

Three interchangeable engines compute the same risk frontier
``best(cell, l) = min(leaf(cell), min over splits and l_left + l_right = l
of best(left, l_left) + best(right, l_right))``:

``cells``
    memoized recursion over cells keyed by their tight rank bounds; any
    dimension, small samples.
``segments``
    one dimension.  Every segmentation of the ordered distinct values into
    intervals is a valid tree partition, so the frontier is an optimal
    segmentation problem, solved in ``O(L k^2)`` for ``k`` distinct values.
``rectangles``
    two dimensions; the recursion tabulated over all rank rectangles.

Splits that leave a child without sample points are never considered: they
induce the same data partition as no split at all.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import Dataset, Leaf, LossKind, Split, TreeModel, check_labels, empirical_risk, leaf_value
from ..errors import ConfigError, GuardRailError
from . import kernels

RECT_MEMORY_LIMIT = 512 * 2**20


@dataclass(frozen=True)
class Penalty:
    lam: float
    theta: float = 1.0

    def __post_init__(self):
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ConfigError(f"penalty lambda must be finite and >= 0, got {self.lam}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"penalty exponent theta must lie in (0, 1], got {self.theta}")

    def __call__(self, leaves: int) -> float:
        return self.lam * leaves**self.theta


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``max_leaves`` is the budget ``L`` of the constrained estimator; for the
    penalized estimator it optionally caps the leaf count searched.
    ``allow_zero_gain`` only affects :func:`greedy_fit`.
    """

    max_leaves: Optional[int] = None
    loss: LossKind = LossKind.SQUARED
    sup_bound: float = math.inf
    penalty: Optional[Penalty] = None
    allow_zero_gain: bool = False
    engine: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if self.sup_bound is None:
            object.__setattr__(self, "sup_bound", math.inf)
        if self.max_leaves is not None and int(self.max_leaves) < 1:
            raise ConfigError(f"max_leaves must be >= 1, got {self.max_leaves}")
        if not self.sup_bound > 0:
            raise ConfigError(f"sup_bound must be positive, got {self.sup_bound}")
        if self.engine not in ("auto", "cells", "segments", "rectangles"):
            raise ConfigError(f"unknown engine {self.engine!r}")


# ---------------------------------------------------------------------------
# helpers shared by the engines


def _stats(y: np.ndarray, loss: LossKind):
    """Per-point (s, q) statistics and the centring offset."""
    if loss is LossKind.ZERO_ONE:
        return y.astype(float), np.zeros_like(y, dtype=float), 0.0
    mu = float(np.mean(y))
    yc = y - mu
    return yc, yc * yc, mu


def _kind(loss: LossKind) -> int:
    return kernels.ZERO_ONE if loss is LossKind.ZERO_ONE else kernels.SQUARED


def _finalize(skel, data: Dataset, loss: LossKind, M: float) -> TreeModel:
    """Turn a skeleton of ``("split", dim, tau, l, r)`` / ``("leaf",)`` into a model."""

    def build(node, idx):
        if node[0] == "leaf":
            return Leaf(leaf_value(data.y[idx], loss, M))
        _, dim, tau, lnode, rnode = node
        go_left = data.x[idx, dim] <= tau
        return Split(dim, float(tau), build(lnode, idx[go_left]), build(rnode, idx[~go_left]))

    return TreeModel(build(skel, np.arange(data.n)), data.d, loss, M)


def _balanced(thresholds: list[float], dim: int = 0):
    if not thresholds:
        return ("leaf",)
    mid = len(thresholds) // 2
    return ("split", dim, thresholds[mid], _balanced(thresholds[:mid], dim), _balanced(thresholds[mid + 1:], dim))


# ---------------------------------------------------------------------------
# engine: memoized recursion over cells


class _CellEngine:
    def __init__(self, data: Dataset, loss: LossKind, M: float, L: int):
        self.data, self.loss, self.M, self.L = data, loss, M, L
        self.memo: dict = {}
        self.pen_memo: dict = {}
        self.leaf_memo: dict = {}
        pairs = [(a, b) for a in range(L - 1) for b in range(L - 1) if a + b <= L - 2]
        pairs.sort(key=lambda p: (p[0] + p[1], p[0]))
        self._flat = np.array([a * (L - 1) + b for a, b in pairs], dtype=np.int64)
        sums = np.array([a + b for a, b in pairs])
        self._starts = np.flatnonzero(np.r_[True, sums[1:] != sums[:-1]]) if pairs else np.array([], dtype=np.int64)

    def _key(self, idx):
        r = self.data.ranks[idx]
        return tuple(r.min(axis=0).tolist() + r.max(axis=0).tolist())

    def leaf(self, idx, key):
        c = self.leaf_memo.get(key)
        if c is None:
            ys = self.data.y[idx]
            if self.loss is LossKind.ZERO_ONE:
                ones = float(ys.sum())
                c = min(ones, ys.size - ones)
            else:
                v = leaf_value(ys, self.loss, self.M)
                c = math.fsum((ys - v) ** 2)
            self.leaf_memo[key] = c
        return c

    def splits(self, idx):
        r = self.data.ranks[idx]
        for j in range(self.data.d):
            rj = r[:, j]
            for k in np.unique(rj)[:-1]:
                go_left = rj <= k
                yield j, int(k), idx[go_left], idx[~go_left]

    def values(self, idx):
        key = self._key(idx)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        L = self.L
        vals = np.full(L, self.leaf(idx, key))
        if L > 1:
            for _, _, li, ri in self.splits(idx):
                vl, vr = self.values(li), self.values(ri)
                grid = (vl[: L - 1, None] + vr[None, : L - 1]).ravel()[self._flat]
                np.minimum(vals[1:], np.minimum.reduceat(grid, self._starts), out=vals[1:])
        vals.setflags(write=False)
        self.memo[key] = vals
        return vals

    def skeleton(self, idx, budget):
        vals = self.values(idx)
        target = vals[budget - 1]
        if self.leaf(idx, self._key(idx)) == target:
            return ("leaf",)
        best = int(np.flatnonzero(vals == target)[0]) + 1
        for j, k, li, ri in self.splits(idx):
            vl, vr = self.values(li), self.values(ri)
            for a in range(1, best):
                if vl[a - 1] + vr[best - a - 1] == target:
                    tau = self.data.distinct[j][k]
                    return ("split", j, tau, self.skeleton(li, a), self.skeleton(ri, best - a))
        raise AssertionError("frontier reconstruction failed")

    def frontier(self):
        return self.values(np.arange(self.data.n))

    def tree(self, budget):
        return self.skeleton(np.arange(self.data.n), budget)

    # additive penalty: min total loss + pen * leaves, ties -> fewer leaves
    def penalized(self, idx, pen):
        key = self._key(idx)
        hit = self.pen_memo.get(key)
        if hit is not None:
            return hit
        best = (self.leaf(idx, key) + pen, 1, None)
        for j, k, li, ri in self.splits(idx):
            vl, nl, _ = self.penalized(li, pen)
            vr, nr, _ = self.penalized(ri, pen)
            cand = vl + vr
            if cand < best[0] or (cand == best[0] and nl + nr < best[1]):
                best = (cand, nl + nr, (j, k, li, ri))
        self.pen_memo[key] = best
        return best

    def penalized_tree(self, pen):
        def rec(idx):
            _, _, choice = self.penalized(idx, pen)
            if choice is None:
                return ("leaf",)
            j, k, li, ri = choice
            return ("split", j, self.data.distinct[j][k], rec(li), rec(ri))

        self.pen_memo = {}
        return rec(np.arange(self.data.n))


# ---------------------------------------------------------------------------
# engine: one-dimensional segmentation


class _SegmentEngine:
    def __init__(self, data: Dataset, loss: LossKind, M: float, L: int):
        if data.d != 1:
            raise ConfigError("the segments engine needs one-dimensional data")
        self.data, self.loss, self.M, self.L = data, loss, M, L
        s, q, self.mu = _stats(data.y, loss)
        g = data.ranks[:, 0]
        k = len(data.distinct[0])
        cnt = np.bincount(g, minlength=k).astype(float)
        gs = np.bincount(g, weights=s, minlength=k)
        gq = np.bincount(g, weights=q, minlength=k)
        # unit u covers distinct values ends[u-1]+1 .. ends[u]
        if loss is LossKind.ZERO_ONE:
            # an optimal segmentation never cuts a run of equally-labelled
            # pure groups: the cost is concave in the cut position
            pure = np.where(gs == 0, 0, np.where(gs == cnt, 1, -1))
            brk = np.flatnonzero((pure[1:] != pure[:-1]) | (pure[1:] == -1))
            ends = np.r_[brk, k - 1]
        else:
            ends = np.arange(k)
        starts = np.r_[0, ends[:-1] + 1]
        self.ends = ends
        self.cnt = np.add.reduceat(cnt, starts)
        self.s = np.add.reduceat(gs, starts)
        self.q = np.add.reduceat(gq, starts)
        self._F = None

    @property
    def n_units(self):
        return len(self.ends)

    def _thresholds(self, cuts):
        v = self.data.distinct[0]
        return [float(v[self.ends[c - 1]]) for c in cuts]

    def _run(self):
        if self._F is None:
            L = min(self.L, self.n_units)
            self._F, self._arg = kernels.seg_frontier(_kind(self.loss), self.cnt, self.s, self.q,
                                                      float(self.M), self.mu, L)
        return self._F, self._arg

    def frontier(self):
        F, _ = self._run()
        row = F[self.n_units]
        if len(row) < self.L:
            row = np.r_[row, np.full(self.L - len(row), row[-1])]
        return row

    def tree(self, budget):
        F, arg = self._run()
        l = min(budget, F.shape[1]) - 1
        t = self.n_units
        cuts = []
        while t > 0:
            while arg[t, l] == -1 and l > 0:
                l -= 1
            start = int(arg[t, l])
            if start > 0:
                cuts.append(start)
            t = start
            l -= 1
        return _balanced(self._thresholds(sorted(cuts)))

    def penalized_tree(self, pen):
        P, _, arg = kernels.seg_penalized(_kind(self.loss), self.cnt, self.s, self.q,
                                          float(self.M), self.mu, float(pen))
        cuts, t = [], self.n_units
        while t > 0:
            t = int(arg[t])
            if t > 0:
                cuts.append(t)
        return _balanced(self._thresholds(sorted(cuts)))


# ---------------------------------------------------------------------------
# engine: two-dimensional rank rectangles


class _RectEngine:
    def __init__(self, data: Dataset, loss: LossKind, M: float, L: int):
        if data.d != 2:
            raise ConfigError("the rectangles engine needs two-dimensional data")
        self.data, self.loss, self.M, self.L = data, loss, M, L
        s, q, self.mu = _stats(data.y, loss)
        self.n0, self.n1 = len(data.distinct[0]), len(data.distinct[1])
        r0, r1 = data.ranks[:, 0], data.ranks[:, 1]

        def prefix(w):
            g = np.zeros((self.n0, self.n1))
            np.add.at(g, (r0, r1), w)
            P = np.zeros((self.n0 + 1, self.n1 + 1))
            P[1:, 1:] = g.cumsum(0).cumsum(1)
            return P

        self.C = prefix(np.ones(data.n))
        self.S = prefix(s)
        self.Q = prefix(q)
        self.V = None

    @staticmethod
    def memory_estimate(data: Dataset, L: int) -> int:
        n0, n1 = len(data.distinct[0]), len(data.distinct[1])
        return 8 * L * (n0 * (n0 + 1) // 2) * (n1 * (n1 + 1) // 2)

    def _rect(self, P, a0, b0, a1, b1):
        return P[b0 + 1, b1 + 1] - P[a0, b1 + 1] - P[b0 + 1, a1] + P[a0, a1]

    def _vals(self, a0, b0, a1, b1):
        p0 = kernels._pair_index(a0, b0, self.n0)
        p1 = kernels._pair_index(a1, b1, self.n1)
        return self.V[p0, p1]

    def _run(self):
        if self.V is None:
            self.V = kernels.rect_frontier(_kind(self.loss), self.C, self.S, self.Q,
                                           float(self.M), self.mu, self.L)
        return self.V

    def frontier(self):
        self._run()
        return self._vals(0, self.n0 - 1, 0, self.n1 - 1).copy()

    def _children(self, a0, b0, a1, b1):
        # same order and skip rules as the compiled kernel
        cnt = self._rect(self.C, a0, b0, a1, b1)
        for kk in range(a0, b0):
            if self._rect(self.C, kk, kk, a1, b1) == 0:
                continue
            nl = self._rect(self.C, a0, kk, a1, b1)
            if cnt - nl == 0:
                break
            yield 0, kk, nl, (a0, kk, a1, b1), (kk + 1, b0, a1, b1)
        for kk in range(a1, b1):
            if self._rect(self.C, a0, b0, kk, kk) == 0:
                continue
            nl = self._rect(self.C, a0, b0, a1, kk)
            if cnt - nl == 0:
                break
            yield 1, kk, nl, (a0, b0, a1, kk), (a0, b0, kk + 1, b1)

    def _skeleton(self, rect, budget):
        vals = self._vals(*rect)
        target = vals[budget - 1]
        cnt = self._rect(self.C, *rect)
        leaf = kernels.leaf_cost(_kind(self.loss), cnt, self._rect(self.S, *rect),
                                 self._rect(self.Q, *rect), float(self.M), self.mu)
        if leaf == target:
            return ("leaf",)
        best = int(np.flatnonzero(vals == target)[0]) + 1
        for dim, kk, nl, lrect, rrect in self._children(*rect):
            vl, vr = self._vals(*lrect), self._vals(*rrect)
            for a in range(1, min(best - 1, int(nl)) + 1):
                if vl[a - 1] + vr[best - a - 1] == target:
                    tau = float(self.data.distinct[dim][kk])
                    return ("split", dim, tau, self._skeleton(lrect, a), self._skeleton(rrect, best - a))
        raise AssertionError("frontier reconstruction failed")

    def tree(self, budget):
        self._run()
        return self._skeleton((0, self.n0 - 1, 0, self.n1 - 1), budget)


def _engine(data: Dataset, loss: LossKind, M: float, L: int, name: str = "auto"):
    if name == "auto":
        if data.d == 1:
            name = "segments"
        elif data.d == 2 and _RectEngine.memory_estimate(data, L) <= RECT_MEMORY_LIMIT:
            name = "rectangles"
        else:
            name = "cells"
    elif name == "rectangles" and data.d == 2 and _RectEngine.memory_estimate(data, L) > RECT_MEMORY_LIMIT:
        raise GuardRailError(f"rectangles engine would need about {_RectEngine.memory_estimate(data, L) >> 20} MiB "
                             f"(limit {RECT_MEMORY_LIMIT >> 20} MiB)")
    if name == "cells" and data.n > 200:
        sys.setrecursionlimit(max(sys.getrecursionlimit(), 4 * data.n + 1000))
    cls = {"cells": _CellEngine, "segments": _SegmentEngine, "rectangles": _RectEngine}[name]
    return cls(data, loss, M, L)


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class RiskFrontier:
    """Least total empirical loss with at most ``l`` leaves, ``l = 1..L``."""

    values: np.ndarray
    n: int
    loss: LossKind
    sup_bound: float
    _data: Dataset = field(repr=False, compare=False)
    _engine: object = field(repr=False, compare=False)

    @property
    def max_leaves(self) -> int:
        return len(self.values)

    @property
    def values_mean(self) -> np.ndarray:
        return self.values / self.n

    def tree(self, leaves: int) -> TreeModel:
        if not 1 <= leaves <= self.max_leaves:
            raise ConfigError(f"leaf budget {leaves} outside 1..{self.max_leaves}")
        return _finalize(self._engine.tree(leaves), self._data, self.loss, self.sup_bound)

    def penalized_choice(self, penalty: Penalty) -> tuple[int, float]:
        """``(l, objective)`` minimizing ``values_mean[l] + lam * l**theta``."""
        ell = np.arange(1, self.max_leaves + 1)
        obj = self.values_mean + penalty.lam * ell.astype(float) ** penalty.theta
        k = int(np.argmin(obj))
        return k + 1, float(obj[k])

    def certified_for(self, penalty: Penalty) -> bool:
        """Whether truncation at ``max_leaves`` cannot change the penalized argmin."""
        if self.max_leaves >= self._data.n_distinct_rows():
            return True
        _, obj = self.penalized_choice(penalty)
        return penalty(self.max_leaves + 1) >= obj


def _check(data: Dataset, cfg: FitConfig) -> None:
    if data.n < 1:
        raise ConfigError("empty dataset")
    if cfg.loss is LossKind.ZERO_ONE:
        check_labels(data.y)


def risk_frontier(data: Dataset, loss=LossKind.SQUARED, M: float = math.inf, L_max: int | None = None,
                  engine: str = "auto") -> RiskFrontier:
    loss = LossKind.parse(loss)
    M = math.inf if M is None else float(M)
    L_max = data.n if L_max is None else int(L_max)
    if L_max < 1:
        raise ConfigError(f"L_max must be >= 1, got {L_max}")
    _check(data, FitConfig(loss=loss, sup_bound=M))
    L_max = min(L_max, data.n)
    eng = _engine(data, loss, M, L_max, engine)
    vals = np.array(eng.frontier(), dtype=float)
    vals.setflags(write=False)
    return RiskFrontier(vals, data.n, loss, M, data, eng)


def fit_constrained(data: Dataset, cfg: FitConfig) -> TreeModel:
    """Empirical risk minimizer over valid trees with at most ``cfg.max_leaves`` leaves."""
    if cfg.penalty is not None:
        raise ConfigError("fit_constrained takes no penalty; use fit_penalized")
    if cfg.max_leaves is None:
        raise ConfigError("fit_constrained needs max_leaves")
    _check(data, cfg)
    L = min(int(cfg.max_leaves), data.n)
    eng = _engine(data, cfg.loss, cfg.sup_bound, L, cfg.engine)
    eng.frontier()
    return _finalize(eng.tree(L), data, cfg.loss, cfg.sup_bound)


@dataclass(frozen=True)
class PenalizedFit:
    model: TreeModel
    leaves: int
    objective: float
    certified: bool


def fit_penalized_detail(data: Dataset, cfg: FitConfig) -> PenalizedFit:
    if cfg.penalty is None:
        raise ConfigError("fit_penalized needs a penalty")
    _check(data, cfg)
    pen = cfg.penalty
    if pen.theta == 1.0 and cfg.max_leaves is None and cfg.engine in ("auto", "cells", "segments"):
        name = cfg.engine
        if name == "auto":
            name = "segments" if data.d == 1 else "cells"
        eng = _engine(data, cfg.loss, cfg.sup_bound, 1, name)
        model = _finalize(eng.penalized_tree(pen.lam * data.n), data, cfg.loss, cfg.sup_bound)
        obj = empirical_risk(model, data).mean + pen(model.n_leaves)
        return PenalizedFit(model, model.n_leaves, obj, True)
    # frontier route; leaf counts beyond the bound below cannot beat a single leaf
    root_risk = risk_frontier(data, cfg.loss, cfg.sup_bound, 1).values_mean[0]
    cap = data.n_distinct_rows()
    if pen.lam > 0:
        cap = min(cap, int(math.floor(((root_risk + pen.lam) / pen.lam) ** (1.0 / pen.theta))) + 1)
    if cfg.max_leaves is not None:
        cap = min(cap, int(cfg.max_leaves))
    fr = risk_frontier(data, cfg.loss, cfg.sup_bound, max(cap, 1), cfg.engine)
    leaves, obj = fr.penalized_choice(pen)
    return PenalizedFit(fr.tree(leaves), leaves, obj, fr.certified_for(pen))


def fit_penalized(data: Dataset, cfg: FitConfig) -> TreeModel:
    """Minimizer of ``empirical risk + lam * (#leaves)**theta``."""
    return fit_penalized_detail(data, cfg).model
