"""Population risk functionals: excess risk, the tree approximation error
proxy and margin profiles.

Truth oracles are plain callables ``X -> values`` (``PshabSpec``,
``HypercubeSpec``, any ``TreeModel`` via :func:`as_oracle`).  Marginals are
objects with ``sample(n, rng)``; a :class:`~ermtree.synth.BoxMarginal` also
enables exact overlay integration and deterministic quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .core import Dataset, LossKind, TreeModel
from .errors import ConfigError, DataError
from .rng import stream
from .solver import risk_frontier
from .synth import BoxMarginal, HypercubeSpec

DEFAULT_N_TEST = 200_000


@dataclass(frozen=True)
class ExcessRiskEstimate:
    value: float
    stderr: float
    method: str  # "monte-carlo" | "exact-overlay" | "quadrature"

    def __post_init__(self):
        if self.value < 0 or self.stderr < 0:
            raise ValueError("excess risk and its standard error are non-negative")


def as_oracle(truth):
    """Callable view of a truth object."""
    if isinstance(truth, TreeModel):
        return truth.predict_many
    if callable(truth):
        return truth
    raise ConfigError(f"cannot evaluate truth of type {type(truth).__name__}")


def _mean_with_stderr(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


def _test_points(marginal, d: int, n_test: int, seed: int) -> np.ndarray:
    if n_test < 1:
        raise ConfigError("n_test must be >= 1")
    marginal = BoxMarginal.uniform(d) if marginal is None else marginal
    return marginal.sample(n_test, stream(seed, "test"))


# ---------------------------------------------------------------------------
# regression


def overlay_integral(model: TreeModel, truth: TreeModel, marginal: Optional[BoxMarginal] = None) -> float:
    """Exact ``E (model(X) - truth(X))^2`` for box-constant functions and a box marginal."""
    marginal = BoxMarginal.uniform(model.d) if marginal is None else marginal
    if truth.d != model.d or marginal.d != model.d:
        raise ConfigError("model, truth and marginal dimensions differ")
    dens = marginal.densities()
    mlo, mhi = np.asarray(marginal.lower), np.asarray(marginal.upper)
    terms = []
    for alo, ahi, av in model.boxes():
        for blo, bhi, bv in truth.boxes():
            if av == bv:
                continue
            lo = np.maximum(alo, blo)
            hi = np.minimum(ahi, bhi)
            if np.any(hi <= lo):
                continue
            ilo = np.maximum(lo, mlo)
            ihi = np.minimum(hi, mhi)
            vol = np.prod(np.clip(ihi - ilo, 0.0, None), axis=1)
            terms.append(math.fsum((vol * dens).tolist()) * (av - bv) ** 2)
    return math.fsum(terms)


def excess_risk_regression(model: TreeModel, truth, marginal=None, n_test: int = DEFAULT_N_TEST,
                           seed: int = 0, method: str = "auto") -> ExcessRiskEstimate:
    """``||f_hat - f*||^2`` under the marginal.

    ``method``: ``"monte-carlo"``; ``"exact-overlay"`` (truth a ``TreeModel``,
    marginal piecewise uniform); ``"quadrature"`` (midpoint rule on a
    stratified grid of about ``n_test`` points, box marginals only);
    ``"auto"`` picks the overlay when it applies, otherwise Monte Carlo.
    """
    boxy = marginal is None or isinstance(marginal, BoxMarginal)
    if method == "auto":
        method = "exact-overlay" if isinstance(truth, TreeModel) and boxy else "monte-carlo"
    if method == "exact-overlay":
        if not isinstance(truth, TreeModel):
            raise ConfigError("exact overlay needs a piecewise-constant (TreeModel) truth")
        if not boxy:
            raise ConfigError("exact overlay needs a piecewise-uniform marginal")
        return ExcessRiskEstimate(overlay_integral(model, truth, marginal), 0.0, "exact-overlay")
    f = as_oracle(truth)
    if method == "quadrature":
        if not boxy:
            raise ConfigError("quadrature needs a piecewise-uniform marginal")
        marginal = BoxMarginal.uniform(model.d) if marginal is None else marginal
        X, wts = _quadrature_nodes(marginal, n_test)
        sq = (model.predict_many(X) - np.asarray(f(X))) ** 2
        return ExcessRiskEstimate(math.fsum((sq * wts).tolist()), 0.0, "quadrature")
    if method != "monte-carlo":
        raise ConfigError(f"unknown method {method!r}")
    X = _test_points(marginal, model.d, n_test, seed)
    mean, se = _mean_with_stderr((model.predict_many(X) - np.asarray(f(X))) ** 2)
    return ExcessRiskEstimate(mean, se, "monte-carlo")


def _quadrature_nodes(marginal: BoxMarginal, n: int):
    pts, wts = [], []
    d = marginal.d
    for lo, hi, m in zip(marginal.lower, marginal.upper, marginal.masses):
        k = max(1, int(round((n * m) ** (1.0 / d))))
        axes = [lj + (np.arange(k) + 0.5) / k * (hj - lj) for lj, hj in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        block = np.stack([g.ravel() for g in mesh], axis=1)
        pts.append(block)
        wts.append(np.full(block.shape[0], m / block.shape[0]))
    return np.concatenate(pts), np.concatenate(wts)


# ---------------------------------------------------------------------------
# classification


def _margin(eta, X) -> np.ndarray:
    if hasattr(eta, "margin"):
        return np.asarray(eta.margin(X))
    return np.abs(np.asarray(as_oracle(eta)(X)) - 0.5)


def excess_risk_classification(model: TreeModel, eta, marginal=None, n_test: int = DEFAULT_N_TEST,
                               seed: int = 0) -> ExcessRiskEstimate:
    """``2 E |eta(X) - 1/2| 1{f_hat(X) != 1{eta(X) >= 1/2}}`` by Monte Carlo."""
    if any(leaf.value not in (0.0, 1.0) for leaf in model.leaves()):
        raise DataError("classification excess risk needs a model with leaf values in {0, 1}")
    if marginal is None and isinstance(eta, HypercubeSpec):
        marginal = eta
    X = _test_points(marginal, model.d, n_test, seed)
    e = np.asarray(as_oracle(eta)(X))
    bayes = (e >= 0.5).astype(float)
    loss = np.where(model.predict_many(X) != bayes, 2.0 * _margin(eta, X), 0.0)
    mean, se = _mean_with_stderr(loss)
    return ExcessRiskEstimate(mean, se, "monte-carlo")


# ---------------------------------------------------------------------------
# approximation error


def _sup_bound(truth) -> float:
    if isinstance(truth, TreeModel):
        sup = max(abs(l.value) for l in truth.leaves())
    else:
        sup = getattr(truth, "sup_norm", None)
    # a zero truth needs no clipping
    return float(sup) if sup else math.inf


def _noiseless_grid(truth, marginal, grid_n: int, loss: LossKind, d: int, seed: int) -> Dataset:
    marginal = BoxMarginal.uniform(d) if marginal is None else marginal
    if isinstance(marginal, BoxMarginal):
        X = marginal.stratified(grid_n)
    else:
        # no stratification available: a fixed sample of the marginal
        X = marginal.sample(grid_n, stream(seed, "grid"))
    if isinstance(truth, TreeModel) and truth.n_internal:
        # one extra node per truth threshold, so that F_L^X contains the truth itself
        extra = np.tile(X[X.shape[0] // 2], (truth.n_internal, 1))
        for k, (j, tau) in enumerate(truth.thresholds()):
            extra[k, j] = tau
        X = np.concatenate([X, extra])
    y = np.asarray(as_oracle(truth)(X), dtype=float)
    if loss is LossKind.ZERO_ONE:
        y = (y >= 0.5).astype(float)
    return Dataset(X, y)


def approximation_error_curve(truth, marginal, L_grid: Sequence[int], grid_n: int = 4096,
                              loss=LossKind.SQUARED, d: Optional[int] = None, n_test: int = DEFAULT_N_TEST,
                              seed: int = 0, method: str = "quadrature", engine: str = "auto") -> np.ndarray:
    """Proxy for ``E_L`` at every ``L`` in ``L_grid`` from a single risk frontier.

    A noiseless exact ERM tree is fitted to ``f*`` on a stratified grid of
    about ``grid_n`` points (a fixed sample for marginals that are not
    piecewise uniform) with clipping level ``M = sup |f*|``; its excess
    risk is then integrated against the marginal.  Because the fitted tree
    is one member of ``F_L``, the proxy sits above ``E_L`` up to the
    quadrature / sampling error.  For classification the excess risk is
    taken against ``eta = truth`` with Bayes labels as grid responses.
    """
    loss = LossKind.parse(loss)
    d = d if d is not None else (marginal.d if marginal is not None else getattr(truth, "d", None))
    if d is None:
        raise ConfigError("cannot infer the dimension of the truth")
    L_grid = [int(L) for L in L_grid]
    if min(L_grid) < 1:
        raise ConfigError("leaf budgets must be >= 1")
    data = _noiseless_grid(truth, marginal, grid_n, loss, d, seed)
    if max(L_grid) > data.n:
        raise ConfigError(f"grid_n={data.n} must be >= L={max(L_grid)}")
    M = _sup_bound(truth) if loss is LossKind.SQUARED else math.inf
    front = risk_frontier(data, loss, M, max(L_grid), engine=engine)
    vals = np.asarray(front.values, dtype=float)
    tol = 1e-12 * max(1.0, float(vals[0]))
    out = []
    for L in L_grid:
        # among zero-gain ties take the fewest leaves: extra splits placed in
        # grid gaps only add quantization error
        L_eff = int(np.argmax(vals[:L] <= vals[L - 1] + tol)) + 1
        model = front.tree(L_eff)
        if loss is LossKind.SQUARED:
            est = excess_risk_regression(model, truth, marginal, n_test, seed,
                                         "exact-overlay" if isinstance(truth, TreeModel) else method)
        else:
            est = excess_risk_classification(model, truth, marginal, n_test, seed)
        out.append(est.value)
    return np.asarray(out)


def approximation_error_proxy(truth, marginal, L: int, grid_n: int = 4096, loss=LossKind.SQUARED,
                              **kwargs) -> float:
    return float(approximation_error_curve(truth, marginal, [L], grid_n, loss, **kwargs)[0])


# ---------------------------------------------------------------------------
# margin


@dataclass(frozen=True)
class MarginProfile:
    """``P(|eta(X) - 1/2| <= t)`` on a grid of ``t``.

    ``strict`` counts only ``0 < |eta - 1/2| <= t``; ``residual`` is the mass
    where ``eta = 1/2`` exactly, so ``total = strict + residual``.
    """

    t: np.ndarray
    strict: np.ndarray
    stderr: np.ndarray
    residual: float
    n_mc: int
    exact: Optional[np.ndarray] = None

    @property
    def total(self) -> np.ndarray:
        return self.strict + self.residual

    def fitted_rho(self) -> float:
        """Slope of ``log P(|eta - 1/2| <= t)`` against ``log t`` over positive entries."""
        keep = self.total > 0
        if keep.sum() < 2:
            raise ConfigError("need two positive profile values to fit an exponent")
        return float(stats.linregress(np.log(self.t[keep]), np.log(self.total[keep])).slope)


def margin_profile(eta, marginal, t_grid, n_mc: int = 1_000_000, seed: int = 0) -> MarginProfile:
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0) or np.any(t > 0.5):
        raise ConfigError("t values must lie in (0, 1/2]")
    if marginal is None and isinstance(eta, HypercubeSpec):
        marginal = eta
    d = marginal.d if hasattr(marginal, "d") else eta.d
    X = _test_points(marginal, d, n_mc, seed)
    gap = np.sort(_margin(eta, X))
    zero = int(np.searchsorted(gap, 0.0, side="right"))
    counts = np.searchsorted(gap, t, side="right") - zero
    p = counts / n_mc
    exact = eta.margin_closed_form(t) if isinstance(eta, HypercubeSpec) else None
    return MarginProfile(t, p, np.sqrt(p * (1 - p) / n_mc), zero / n_mc, n_mc, exact)
