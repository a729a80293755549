"""CART-style best-first growth, kept as a baseline for the exact solver."""

from __future__ import annotations

import numpy as np

from ..core import Dataset, LossKind, check_labels
from ..errors import ConfigError
from .exact import FitConfig, _finalize


def _cost(ys: np.ndarray, loss: LossKind, M: float) -> float:
    if loss is LossKind.ZERO_ONE:
        ones = ys.sum()
        return float(min(ones, ys.size - ones))
    v = min(max(ys.mean(), -M), M)
    return float(((ys - v) ** 2).sum())


def _best_split(data: Dataset, idx: np.ndarray, loss: LossKind, M: float):
    """Largest loss decrease over all splits of the points ``idx``."""
    parent = _cost(data.y[idx], loss, M)
    best = None
    for j in range(data.d):
        xs = data.x[idx, j]
        for tau in np.unique(xs)[:-1]:
            go_left = xs <= tau
            gain = parent - _cost(data.y[idx[go_left]], loss, M) - _cost(data.y[idx[~go_left]], loss, M)
            if best is None or gain > best[0]:
                best = (gain, j, float(tau), idx[go_left], idx[~go_left])
    return best


def greedy_fit(data: Dataset, cfg: FitConfig):
    """Grow by repeatedly applying the single best split among current leaves.

    Stops at ``cfg.max_leaves`` leaves or when no split decreases the loss;
    splits with zero decrease are taken only with ``cfg.allow_zero_gain``.
    """
    if cfg.max_leaves is None:
        raise ConfigError("greedy_fit needs max_leaves")
    if cfg.loss is LossKind.ZERO_ONE:
        check_labels(data.y)
    M = cfg.sup_bound
    tol = 1e-12 * max(1.0, float(np.abs(data.y).max()) ** 2) * data.n
    # leaves: list of [idx, cached best split]; tree is rebuilt from a split log
    leaves = [np.arange(data.n)]
    log = {}
    while len(leaves) < cfg.max_leaves:
        cands = [(k, _best_split(data, idx, cfg.loss, M)) for k, idx in enumerate(leaves)]
        cands = [(k, c) for k, c in cands if c is not None]
        if not cands:
            break
        k, (gain, j, tau, li, ri) = max(cands, key=lambda kc: (kc[1][0], -kc[0]))
        if gain < -tol or (gain <= tol and not cfg.allow_zero_gain):
            break
        log[tuple(leaves[k].tolist())] = (j, tau, li, ri)
        leaves[k:k + 1] = [li, ri]

    def skel(idx):
        key = tuple(idx.tolist())
        if key not in log:
            return ("leaf",)
        j, tau, li, ri = log[key]
        return ("split", j, tau, skel(li), skel(ri))

    return _finalize(skel(np.arange(data.n)), data, cfg.loss, M)
