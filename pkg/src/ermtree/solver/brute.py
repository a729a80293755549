"""Exhaustive enumeration of split trees, used as an independent oracle.

Nothing here shares code with the dynamic programs apart from the leaf
value rule and the risk evaluation.  Candidate thresholds are *all*
observed values of a dimension that fall strictly inside the current cell,
including those that leave a child without sample points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Dataset, Leaf, LossKind, Split, TreeModel, check_labels, empirical_risk, leaf_value
from ..errors import ConfigError, GuardRailError
from .exact import FitConfig

BRUTE_LIMITS = {"n": 10, "d": 2, "L": 4}
ENUM_LIMITS = {"n": 6, "d": 2, "L": 4}


def _guard(data: Dataset, L: int, limits: dict, what: str) -> None:
    if data.n > limits["n"] or data.d > limits["d"] or L > limits["L"]:
        raise GuardRailError(
            f"{what} is limited to n <= {limits['n']}, d <= {limits['d']}, L <= {limits['L']} "
            f"(got n={data.n}, d={data.d}, L={L})")


def _trees(values, lo, hi, budget):
    """Yield ``(shape, leaves)`` for every split tree on the box ``[lo, hi]``.

    ``shape`` is nested tuples ``("leaf",)`` / ``(dim, tau, left, right)``.
    """
    yield ("leaf",), 1
    if budget < 2:
        return
    for j, vals in enumerate(values):
        for tau in vals:
            if not lo[j] < tau < hi[j]:
                continue
            lhi = list(hi)
            lhi[j] = tau
            rlo = list(lo)
            rlo[j] = tau
            for left, nl in _trees(values, lo, lhi, budget - 1):
                for right, nr in _trees(values, rlo, hi, budget - nl):
                    yield (j, tau, left, right), nl + nr


def _blocks(shape, x, idx):
    if shape[0] == "leaf":
        return [idx]
    j, tau, left, right = shape
    go_left = x[idx, j] <= tau
    return _blocks(left, x, idx[go_left]) + _blocks(right, x, idx[~go_left])


def _data_partition(shape, x):
    blocks = _blocks(shape, x, np.arange(x.shape[0]))
    return frozenset(frozenset(b.tolist()) for b in blocks if b.size)


def _all_trees(data: Dataset, L: int):
    values = [sorted(set(data.x[:, j].tolist())) for j in range(data.d)]
    # the root is closed at 0, so a threshold equal to 0 is still interior
    yield from _trees(values, [-1.0] * data.d, [1.0] * data.d, L)


def _model(shape, data: Dataset, loss: LossKind, M: float) -> TreeModel:
    def build(node, idx):
        if node[0] == "leaf":
            # an empty leaf takes 0; it never holds a sample point
            return Leaf(leaf_value(data.y[idx], loss, M) if idx.size else 0.0)
        j, tau, left, right = node
        go_left = data.x[idx, j] <= tau
        return Split(j, float(tau), build(left, idx[go_left]), build(right, idx[~go_left]))

    return TreeModel(build(shape, np.arange(data.n)), data.d, loss, M)


def brute_force_fit(data: Dataset, cfg: FitConfig) -> TreeModel:
    """Global minimizer found by enumerating every split tree with ``<= L`` leaves.

    Trees are de-duplicated by the partition they induce on the sample; the
    representative kept for each partition is the first one met in order of
    increasing leaf count, so it never carries an empty leaf.
    """
    L = cfg.max_leaves or 1
    _guard(data, L, BRUTE_LIMITS, "brute_force_fit")
    if cfg.loss is LossKind.ZERO_ONE:
        check_labels(data.y)
    M = cfg.sup_bound
    by_partition: dict = {}
    for shape, leaves in sorted(_all_trees(data, L), key=lambda t: t[1]):
        part = _data_partition(shape, data.x)
        if part not in by_partition:
            by_partition[part] = shape
    best, best_risk = None, math.inf
    # deterministic scan order: fewest blocks first, then sorted block lists
    for part in sorted(by_partition, key=lambda p: (len(p), sorted(sorted(b) for b in p))):
        model = _model(by_partition[part], data, cfg.loss, M)
        risk = empirical_risk(model, data).total
        if risk < best_risk:
            best, best_risk = model, risk
    return best


@dataclass(frozen=True)
class Enumeration:
    """Split trees with at most ``L`` leaves, counted as split histories."""

    count: int
    bound: int
    partitions: list

    @property
    def within_bound(self) -> bool:
        return self.count <= self.bound


def enumerate_valid_partitions(data: Dataset, L: int) -> Enumeration:
    """List every valid split tree with ``<= L`` leaves and its data partition.

    Each split picks one (dimension, observed value) pair strictly inside the
    current cell; no identification of equivalent trees is performed.
    """
    if L < 1:
        raise ConfigError(f"L must be >= 1, got {L}")
    _guard(data, L, ENUM_LIMITS, "enumerate_valid_partitions")
    parts = []
    for shape, _ in _all_trees(data, L):
        blocks = _blocks(shape, data.x, np.arange(data.n))
        parts.append(tuple(tuple(b.tolist()) for b in blocks))
    return Enumeration(len(parts), (data.d * data.n) ** L, parts)
