"""Experiment harness: n-sweeps and L-sweeps, slope fitting against the
theoretical exponents, oracle-inequality constants, leaf allocation and
small combinatorial property checks.

Replications are independent tasks keyed by ``(point index, rep index)``
with derived sub-seeds.  Results are reduced in task order, so reports are
identical whatever the number of workers.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .core import Dataset, LossKind, TreeModel, pointwise_loss
from .errors import ConfigError, ErmTreeError
from .evaluation import approximation_error_curve, excess_risk_classification, excess_risk_regression
from .rng import stream, substream_seed
from .solver import (FitConfig, Penalty, enumerate_valid_partitions, fit_penalized_detail,
                     risk_frontier)
from .synth import (BoxMarginal, HypercubeSpec, NoiseModel, PshabSpec, make_hypercube, sample_hypercube,
                    sample_regression)

SLOPE_TOLERANCE = {"reg": 0.15, "cls": 0.20, "heavy_tail": 0.15, "approx_reg": 0.3, "approx_cls": 0.3}


# ---------------------------------------------------------------------------
# exponents and slopes


def target_exponent(kind: str, s: int = 1, abar: float = 1.0, rho: float = 0.0, m: Optional[float] = None) -> float:
    """Negated rate exponent of the requested law."""
    if s < 1 or not 0 < abar <= 1 or rho < 0:
        raise ConfigError(f"invalid exponent parameters s={s}, abar={abar}, rho={rho}")
    if kind == "reg":
        return -2 * abar / (s + 2 * abar)
    if kind == "cls":
        return -(1 + rho) * abar / (s + (2 + rho) * abar)
    if kind == "approx_reg":
        return -2 * abar / s
    if kind == "approx_cls":
        return -(1 + rho) * abar / s
    if kind == "heavy_tail":
        if m is None or m <= 2:
            raise ConfigError("heavy_tail exponent needs m > 2")
        return -2 * (1 - 2 / m) * abar / (s + 2 * abar)
    raise ConfigError(f"unknown exponent kind {kind!r}")


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float


def fit_slope(x, y) -> SlopeFit:
    """OLS fit of ``log y`` on ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 3:
        raise ConfigError("a slope needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigError("log-log slope needs positive values")
    res = stats.linregress(np.log(x), np.log(y))
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr))


# ---------------------------------------------------------------------------
# reports


def _num(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


@dataclass(frozen=True)
class RatePoint:
    value: float
    median: float
    iqr: float
    reps: int
    samples: tuple = ()
    failed: int = 0


@dataclass(frozen=True)
class RateReport:
    sweep_var: str
    points: tuple
    slope: float
    intercept: float
    slope_stderr: float
    target_exponent: float
    tolerance: float
    within_tolerance: bool
    skipped: bool = False
    notes: tuple = ()

    @classmethod
    def build(cls, sweep_var: str, points: Sequence[RatePoint], target: float, tolerance: float,
              notes=()) -> "RateReport":
        xs = np.array([p.value for p in points], dtype=float)
        ys = np.array([p.median for p in points], dtype=float)
        notes = list(notes)
        ok = np.isfinite(ys) & (ys > 0)
        if ok.sum() < 3:
            # e.g. a realizable truth whose proxy is zero from some L on
            flat = bool(np.all(np.nan_to_num(ys, nan=np.inf) <= 1e-6))
            notes.append("slope fit skipped: fewer than 3 positive medians")
            return cls(sweep_var, tuple(points), math.nan, math.nan, math.nan, target, tolerance, flat, True,
                       tuple(notes))
        fit = fit_slope(xs[ok], ys[ok])
        if np.any(np.diff(ys[ok]) > 0):
            notes.append("non-monotone medians")
        return cls(sweep_var, tuple(points), fit.slope, fit.intercept, fit.stderr, target, tolerance,
                   bool(abs(fit.slope - target) <= tolerance), False, tuple(notes))

    @property
    def medians(self) -> np.ndarray:
        return np.array([p.median for p in self.points])

    def to_csv(self) -> str:
        lines = ["sweep_var,value,median_excess,iqr,reps"]
        for p in self.points:
            lines.append(f"{self.sweep_var},{p.value!r},{float(p.median)!r},{float(p.iqr)!r},{p.reps}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"slope": _num(self.slope), "stderr": _num(self.slope_stderr), "intercept": _num(self.intercept),
                "target": self.target_exponent, "tolerance": self.tolerance, "pass": self.within_tolerance,
                "skipped": self.skipped, "notes": list(self.notes),
                "failed_cells": int(sum(p.failed for p in self.points))}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True) + "\n"


def _aggregate(value, samples: Sequence[float]) -> RatePoint:
    arr = np.array([v for v in samples if v is not None and math.isfinite(v)], dtype=float)
    failed = len(samples) - arr.size
    if arr.size == 0:
        return RatePoint(value, math.nan, math.nan, 0, tuple(samples), failed)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return RatePoint(value, float(med), float(q3 - q1), int(arr.size), tuple(float(v) for v in samples), failed)


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Schedule:
    """Penalty schedule with a validated constant.

    Regression: ``lam = c (M + K)^2 (log(n d) + u) / n`` with ``theta = 1``.
    Classification: ``lam = c ((log(n d) + u) / n)^theta``.  The constant
    ``c`` is picked from ``c_grid`` by held-out risk on a random
    ``validation_fraction`` split; the tree is then refitted on all data.
    ``max_leaves`` caps the frontier used when ``theta < 1``.
    """

    kind: str = "reg"
    theta: float = 1.0
    c_grid: tuple = tuple(np.logspace(-2, 1, 7).tolist())
    u: float = 1.0
    validation_fraction: float = 0.25
    M: float = 1.0
    K: float = 0.0
    max_leaves: int = 64

    def __post_init__(self):
        if self.kind not in ("reg", "cls"):
            raise ConfigError(f"schedule kind must be 'reg' or 'cls', got {self.kind!r}")
        if not self.c_grid or any(c <= 0 for c in self.c_grid):
            raise ConfigError("c_grid must be a non-empty list of positive constants")
        if self.u < 0:
            raise ConfigError("u must be >= 0")
        if not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.max_leaves < 1:
            raise ConfigError("max_leaves must be >= 1")

    @classmethod
    def for_classification(cls, rho: Optional[float] = None, theta: Optional[float] = None, **kw) -> "Schedule":
        if theta is None:
            theta = (1 + rho) / (2 + rho) if rho is not None else 0.5
        return cls(kind="cls", theta=float(theta), **kw)

    @property
    def loss(self) -> LossKind:
        return LossKind.SQUARED if self.kind == "reg" else LossKind.ZERO_ONE

    def lam(self, c: float, n: int, d: int) -> float:
        base = (math.log(n * d) + self.u) / n
        if self.kind == "reg":
            return c * (self.M + self.K) ** 2 * base
        return c * base**self.theta


@dataclass(frozen=True)
class TunedFit:
    model: TreeModel
    c: float
    c_index: int
    certified: bool


def _penalized_models(data: Dataset, schedule: Schedule, lams: Sequence[float]):
    """One penalized fit per ``lam``; ``theta < 1`` shares a single capped frontier."""
    M = schedule.M if schedule.kind == "reg" else math.inf
    if schedule.theta == 1.0:
        out = []
        for lam in lams:
            fit = fit_penalized_detail(data, FitConfig(loss=schedule.loss, sup_bound=M, penalty=Penalty(lam, 1.0)))
            out.append((fit.model, fit.certified))
        return out
    front = risk_frontier(data, schedule.loss, M, min(schedule.max_leaves, data.n))
    out, cache = [], {}
    for lam in lams:
        pen = Penalty(lam, schedule.theta)
        leaves, _ = front.penalized_choice(pen)
        if leaves not in cache:
            cache[leaves] = front.tree(leaves)
        out.append((cache[leaves], front.certified_for(pen)))
    return out


def tune_and_fit(data: Dataset, schedule: Schedule, seed: int, validation_fraction: Optional[float] = None) -> TunedFit:
    """Select ``c`` on a held-out split, then refit on the full sample."""
    frac = schedule.validation_fraction if validation_fraction is None else validation_fraction
    n = data.n
    n_val = int(round(frac * n))
    if len(schedule.c_grid) == 1 or n_val < 1 or n - n_val < 1:
        k = 0
    else:
        perm = stream(seed, "validation").permutation(n)
        train, val = data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))
        models = _penalized_models(train, schedule, [schedule.lam(c, train.n, data.d) for c in schedule.c_grid])
        risks = [math.fsum(pointwise_loss(val.y, m.predict_many(val.x), schedule.loss).tolist())
                 for m, _ in models]
        # ties go to the larger constant, i.e. the simpler tree
        best = min(risks)
        k = max(i for i, r in enumerate(risks) if r == best)
    c = schedule.c_grid[k]
    (model, cert), = _penalized_models(data, schedule, [schedule.lam(c, n, data.d)])
    return TunedFit(model, float(c), k, cert)


# ---------------------------------------------------------------------------
# worlds


@dataclass(frozen=True)
class RegressionWorld:
    """Fixed regression truth ``f*`` with a piecewise-uniform marginal.

    Excess risk is integrated by midpoint quadrature on about ``n_test``
    nodes, which has no Monte Carlo noise.
    """

    truth: PshabSpec
    marginal: Optional[BoxMarginal] = None
    s: Optional[int] = None
    abar: Optional[float] = None

    kind = "reg"
    rho = 0.0

    @property
    def d(self) -> int:
        return self.truth.d

    @property
    def sparsity(self) -> int:
        return self.s if self.s is not None else max(len(p.support) for p in self.truth.pieces)

    @property
    def smoothness(self) -> float:
        return self.abar if self.abar is not None else min(p.abar for p in self.truth.pieces)

    def draw(self, n: int, noise: NoiseModel, seed: int) -> Dataset:
        return sample_regression(self.truth, noise, n, seed, self.marginal)[0]

    def excess(self, model: TreeModel, n: int, seed: int, n_test: int) -> float:
        return excess_risk_regression(model, self.truth, self.marginal, n_test, seed, "quadrature").value

    def approximation_truth(self, n: int):
        return self.truth


@dataclass(frozen=True)
class HypercubeWorld:
    """Classification world built from one fixed hypercube spec."""

    spec: HypercubeSpec

    kind = "cls"

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def sparsity(self) -> int:
        return self.spec.s

    @property
    def smoothness(self) -> float:
        return self.spec.abar

    @property
    def rho(self) -> float:
        return self.spec.rho

    def spec_for(self, n: int, seed: int) -> HypercubeSpec:
        return self.spec

    def draw(self, n: int, noise: NoiseModel, seed: int) -> Dataset:
        return sample_hypercube(self.spec_for(n, seed), n, seed)[0]

    def excess(self, model: TreeModel, n: int, seed: int, n_test: int) -> float:
        spec = self.spec_for(n, seed)
        return excess_risk_classification(model, spec, spec, n_test, substream_seed(seed, "test")).value


@dataclass(frozen=True)
class ScaledHypercubeWorld(HypercubeWorld):
    """Hypercube worlds indexed by ``n`` as in the minimax construction.

    The grid resolution grows as ``r(n) = round(r0 (n / n0)^(1 / (s + (2 + rho) abar)))``;
    the bump height ``b'`` and, for ``rho > 0``, the ball mass ``w`` then
    shrink at the rates that make every estimator's excess risk decay like
    ``n^(-(1 + rho) abar / (s + (2 + rho) abar))``.  The sign vector is
    redrawn for every replication.
    """

    spec: Optional[HypercubeSpec] = None
    d_: int = 1
    s_: int = 1
    rho_: float = 0.0
    abar_: float = 1.0
    B: int = 1
    r0: float = 4.0
    n0: float = 512.0
    C_phi: float = 1.0
    Lambda_inf: float = 1.0
    C1: float = 1.0

    @property
    def d(self) -> int:
        return self.d_

    @property
    def sparsity(self) -> int:
        return self.s_

    @property
    def smoothness(self) -> float:
        return self.abar_

    @property
    def rho(self) -> float:
        return self.rho_

    def resolution(self, n: int) -> int:
        expo = 1.0 / (self.s_ + (2 + self.rho_) * self.abar_)
        return max(1, int(round(self.r0 * (n / self.n0) ** expo)))

    def spec_for(self, n: int, seed: int) -> HypercubeSpec:
        return make_hypercube(substream_seed(seed, "world"), self.d_, self.B, self.s_, self.rho_, self.resolution(n),
                              self.Lambda_inf, self.abar_, self.C_phi, self.C1)


def _world_from_truth(world):
    if isinstance(world, PshabSpec):
        return RegressionWorld(world)
    if isinstance(world, HypercubeSpec):
        return HypercubeWorld(world)
    return world


# ---------------------------------------------------------------------------
# rate sweeps


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ERMTREE_WORKERS", "1")))
    except ValueError as exc:
        raise ConfigError("ERMTREE_WORKERS must be an integer") from exc


def _run_tasks(fn, tasks, workers: Optional[int]):
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def _rate_task(args):
    world, noise, n, schedule, seed, n_test = args
    try:
        data = world.draw(n, noise, substream_seed(seed, "data"))
        fit = tune_and_fit(data, schedule, substream_seed(seed, "tune"))
        return world.excess(fit.model, n, substream_seed(seed, "excess"), n_test), fit.c_index, fit.certified
    except ErmTreeError:
        return math.nan, -1, False


def run_rate_sweep(world, noise: NoiseModel, n_grid: Sequence[int], reps: int, schedule: Schedule, seed: int,
                   tolerance: Optional[float] = None, target: Optional[float] = None, n_test: int = 200_000,
                   workers: Optional[int] = None) -> RateReport:
    """Median excess risk of the tuned penalized ERM tree at each ``n``, and its log-log slope."""
    world = _world_from_truth(world)
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 3:
        raise ConfigError("a rate sweep needs at least 3 sample sizes")
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    if schedule.kind != world.kind:
        raise ConfigError(f"{schedule.kind} schedule used with a {world.kind} world")
    if target is None:
        if world.kind == "reg" and noise.kind == "student_t":
            target = target_exponent("heavy_tail", world.sparsity, world.smoothness, m=noise.m)
        else:
            target = target_exponent(world.kind, world.sparsity, world.smoothness, world.rho)
    tolerance = SLOPE_TOLERANCE[world.kind] if tolerance is None else tolerance
    tasks = [(world, noise, n, schedule, substream_seed(seed, "rate", i, r), n_test)
             for i, n in enumerate(n_grid) for r in range(reps)]
    results = _run_tasks(_rate_task, tasks, workers)
    points, uncertified = [], 0
    for i, n in enumerate(n_grid):
        chunk = results[i * reps:(i + 1) * reps]
        uncertified += sum(1 for v, k, cert in chunk if k >= 0 and not cert)
        points.append(_aggregate(n, [v for v, _, _ in chunk]))
    notes = [f"{uncertified} fits hit the leaf cap before the penalty certified optimality"] if uncertified else []
    return RateReport.build("n", points, target, tolerance, notes)


def run_approx_sweep(truth, marginal, L_grid: Sequence[int], grid_n: int = 4096, loss=LossKind.SQUARED,
                     s: int = 1, abar: float = 1.0, rho: float = 0.0, tolerance: Optional[float] = None,
                     target: Optional[float] = None, **kwargs) -> RateReport:
    """Approximation-error proxy along ``L_grid`` and its slope against ``-2 abar / s`` (or the classification laws)."""
    loss = LossKind.parse(loss)
    if len(L_grid) < 3:
        raise ConfigError("an approximation sweep needs at least 3 leaf budgets")
    kind = "approx_reg" if loss is LossKind.SQUARED else "approx_cls"
    target = target_exponent(kind, s, abar, rho) if target is None else target
    tolerance = SLOPE_TOLERANCE[kind] if tolerance is None else tolerance
    vals = approximation_error_curve(truth, marginal, L_grid, grid_n, loss, **kwargs)
    points = [RatePoint(int(L), float(v), 0.0, 1, (float(v),)) for L, v in zip(L_grid, vals)]
    return RateReport.build("L", points, target, tolerance)


@dataclass(frozen=True)
class HeavyTailComparison:
    reports: dict  # label -> RateReport, labels "gaussian" and "t<m>"

    def label(self, m) -> str:
        return f"t{m:g}"

    def table(self) -> list[tuple]:
        """Rows ``(n, median under each noise in report order)``."""
        keys = list(self.reports)
        ns = [p.value for p in self.reports[keys[0]].points]
        return [(n, *[self.reports[k].points[i].median for k in keys]) for i, n in enumerate(ns)]

    def checks(self, consistency_tol: float = 0.1) -> dict:
        """Degradation checks against the Gaussian baseline.

        The heaviest tail (smallest ``m``) must have medians at least the
        Gaussian ones at every ``n`` and a slope no steeper than the
        Gaussian slope minus its standard error; the lightest tail (largest
        ``m``, when several are given) must have a slope within
        ``consistency_tol`` of the Gaussian slope.
        """
        g = self.reports["gaussian"]
        tails = [k for k in self.reports if k != "gaussian"]
        heavy = min(tails, key=lambda k: float(k[1:]))
        h = self.reports[heavy]
        out = {
            "heavy": heavy,
            "medians_dominate": bool(np.all(h.medians >= g.medians)),
            "slope_not_steeper": bool(h.slope >= g.slope - g.slope_stderr),
        }
        if len(tails) > 1:
            light = max(tails, key=lambda k: float(k[1:]))
            out["light"] = light
            out["light_consistent"] = bool(abs(self.reports[light].slope - g.slope) <= consistency_tol)
        out["pass"] = all(v for k, v in out.items() if isinstance(v, bool))
        return out

    def summary(self) -> dict:
        doc = {k: r.summary() for k, r in self.reports.items()}
        doc["checks"] = self.checks()
        return doc


def heavy_tail_comparison(truth, n_grid: Sequence[int], reps: int, m_values: Sequence[float], seed: int,
                          schedule: Optional[Schedule] = None, variance: float = 1.0, **kwargs) -> HeavyTailComparison:
    """Sweeps under unit-variance Gaussian and Student-t noises with identical truths and seeds.

    The Student-t draws reuse the Gaussian normal variates, so the noise
    vectors are coupled replication by replication.
    """
    if any(m <= 2 for m in m_values):
        raise ConfigError("all m values must exceed 2")
    sd = math.sqrt(variance)
    schedule = schedule or Schedule(kind="reg", K=sd)
    reports = {"gaussian": run_rate_sweep(truth, NoiseModel.gaussian(sd), n_grid, reps, schedule, seed, **kwargs)}
    for m in m_values:
        reports[f"t{m:g}"] = run_rate_sweep(truth, NoiseModel.student_t(m, sd), n_grid, reps, schedule, seed, **kwargs)
    return HeavyTailComparison(reports)


def validation_stability(world, noise: NoiseModel, n: int, reps: int, schedule: Schedule, seed: int) -> float:
    """Fraction of replications whose selected ``c`` moves by at most one grid step
    when the validation share is doubled (soft diagnostic)."""
    world = _world_from_truth(world)
    hits = 0
    for r in range(reps):
        task = substream_seed(seed, "stability", r)
        data = world.draw(n, noise, substream_seed(task, "data"))
        a = tune_and_fit(data, schedule, substream_seed(task, "tune"))
        b = tune_and_fit(data, schedule, substream_seed(task, "tune"), min(0.9, 2 * schedule.validation_fraction))
        hits += abs(a.c_index - b.c_index) <= 1
    return hits / reps


# ---------------------------------------------------------------------------
# oracle inequality


@dataclass(frozen=True)
class OracleTable:
    n_grid: tuple
    L_grid: tuple
    excess: np.ndarray  # median excess risk, shape (len(n_grid), len(L_grid))
    approx: np.ndarray  # E_L proxy per L
    C: np.ndarray

    @property
    def max_C(self) -> float:
        return float(np.max(self.C))

    def n_ratio(self) -> np.ndarray:
        """Per-``L`` ratio ``max / min`` of the implied constants over ``n`` (zero cells excluded)."""
        out = []
        for j in range(len(self.L_grid)):
            col = self.C[:, j][self.C[:, j] > 0]
            out.append(float(col.max() / col.min()) if col.size else 1.0)
        return np.asarray(out)

    def to_csv(self) -> str:
        lines = ["n,L,median_excess,approx_proxy,C_hat"]
        for i, n in enumerate(self.n_grid):
            for j, L in enumerate(self.L_grid):
                lines.append(f"{n},{L},{float(self.excess[i, j])!r},{float(self.approx[j])!r},{float(self.C[i, j])!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"max_C": self.max_C, "n_ratio": self.n_ratio().tolist()}


def _oracle_task(args):
    world, noise, n, L_grid, M, seed, n_test = args
    data = world.draw(n, noise, substream_seed(seed, "data"))
    loss = LossKind.SQUARED if world.kind == "reg" else LossKind.ZERO_ONE
    M = M if world.kind == "reg" else math.inf
    front = risk_frontier(data, loss, M, min(max(L_grid), data.n))
    return [world.excess(front.tree(min(L, front.max_leaves)), n, substream_seed(seed, "excess", L), n_test)
            for L in L_grid]


def oracle_inequality_check(world, noise: NoiseModel, n_grid: Sequence[int], L_grid: Sequence[int], u: float,
                            reps: int, seed: int, M: float = 1.0, grid_n: int = 4096, n_test: int = 200_000,
                            workers: Optional[int] = None) -> OracleTable:
    """Implied constants of the optimized oracle inequality on an ``(n, L)`` grid.

    Regression: ``C = max(0, E(f_L)^(1/2) - E_L^(1/2)) / ((M + K)^2 (L log(nd) + u) / n)^(1/2)``.
    Classification uses the ``(2 + rho) / (2 + 2 rho)`` powers and no ``(M + K)^2`` factor.
    ``E(f_L)`` is the median over replications of the constrained fit's
    excess risk; ``E_L`` is the approximation proxy on ``grid_n`` points.
    """
    world = _world_from_truth(world)
    n_grid, L_grid = tuple(int(n) for n in n_grid), tuple(int(L) for L in L_grid)
    tasks = [(world, noise, n, L_grid, M, substream_seed(seed, "oracle", i, r), n_test)
             for i, n in enumerate(n_grid) for r in range(reps)]
    results = _run_tasks(_oracle_task, tasks, workers)
    excess = np.empty((len(n_grid), len(L_grid)))
    for i in range(len(n_grid)):
        excess[i] = np.median(np.array(results[i * reps:(i + 1) * reps]), axis=0)
    d = world.d
    if world.kind == "reg":
        approx = approximation_error_curve(world.approximation_truth(n_grid[0]), world.marginal, L_grid, grid_n,
                                           LossKind.SQUARED, d=d)
        power, scale = 0.5, (M + math.sqrt(noise.variance)) ** 2
    else:
        spec = world.spec_for(n_grid[0], seed)
        approx = approximation_error_curve(spec, spec, L_grid, grid_n, LossKind.ZERO_ONE, d=d)
        power, scale = (2 + world.rho) / (2 + 2 * world.rho), 1.0
    C = np.empty_like(excess)
    for i, n in enumerate(n_grid):
        for j, L in enumerate(L_grid):
            est = math.sqrt(scale * (L * math.log(n * d) + u) / n)
            C[i, j] = max(0.0, excess[i, j] ** power - approx[j] ** power) / est
    return OracleTable(n_grid, L_grid, excess, np.asarray(approx), C)


# ---------------------------------------------------------------------------
# leaf allocation


@dataclass(frozen=True)
class AllocationResult:
    weights: np.ndarray
    leaves: np.ndarray
    continuous: np.ndarray

    def bracket_ok(self) -> bool:
        L, B = int(self.leaves.sum()), self.leaves.size
        lo = (L - B) * self.weights
        return bool(np.all(lo < self.leaves) and np.all(self.leaves <= lo + 2) and np.all(self.leaves >= 1))


def allocation_weights(v, theta: float, mode: str = "sum") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if mode == "sum":
        raw = v ** (1.0 / (theta + 1.0))
    elif mode == "max":
        raw = v ** (1.0 / theta)
    else:
        raise ConfigError(f"exponent_mode must be 'sum' or 'max', got {mode!r}")
    return raw / math.fsum(raw.tolist())


def allocation_objective(v, leaves, theta: float, mode: str = "sum") -> float:
    terms = np.asarray(v, dtype=float) * np.asarray(leaves, dtype=float) ** (-theta)
    return float(terms.sum() if mode == "sum" else terms.max())


def allocate_leaves(v, L: int, theta: float = 1.0, mode: str = "sum") -> AllocationResult:
    """Split a leaf budget ``L`` across ``B`` pieces with complexities ``v``.

    ``sum`` minimizes ``sum_b v_b L_b^-theta`` (weights ``v^(1/(theta+1))``),
    ``max`` minimizes ``max_b v_b L_b^-theta`` (weights ``v^(1/theta)``).
    Integers: ``floor((L - B) w_b) + 1``, with the remainder added one leaf
    at a time to the first pieces.
    """
    v = np.asarray(v, dtype=float)
    B = v.size
    if B < 1 or np.any(v <= 0):
        raise ConfigError("v must be a non-empty positive vector")
    if not 0 < theta <= 1:
        raise ConfigError("theta must lie in (0, 1]")
    if L < B:
        raise ConfigError(f"need L >= B, got L={L}, B={B}")
    w = allocation_weights(v, theta, mode)
    leaves = np.floor((L - B) * w).astype(np.int64) + 1
    R = int(L - leaves.sum())
    leaves[:R] += 1
    return AllocationResult(w, leaves, L * w)


def alloc_check(trials: int, seed: int, max_B: int = 6, max_L: int = 200) -> dict:
    """Integer-allocation bracket invariants over random ``(v, L, theta)`` in both modes."""
    rng = stream(seed, "alloc")
    failures = 0
    for _ in range(trials):
        B = int(rng.integers(1, max_B + 1))
        v = rng.uniform(0.01, 10.0, size=B)
        L = int(rng.integers(B, max_L + 1))
        theta = float(rng.uniform(0.05, 1.0))
        for mode in ("sum", "max"):
            res = allocate_leaves(v, L, theta, mode)
            failures += not (int(res.leaves.sum()) == L and res.bracket_ok())
    return {"trials": trials, "failures": failures, "pass": failures == 0}


def simplex_grid_check(v, L: int, theta: float, mode: str = "max", resolution: float = 1e-3) -> dict:
    """Compare the closed-form continuous optimum with every point of a simplex grid (``B <= 3``)."""
    v = np.asarray(v, dtype=float)
    B = v.size
    if B > 3:
        raise ConfigError("simplex grid check supports B <= 3")
    k = int(round(1 / resolution))
    best = math.inf
    if B == 1:
        grid = np.ones((1, 1))
    elif B == 2:
        a = np.arange(1, k) / k
        grid = np.stack([a, 1 - a], axis=1)
    else:
        i, j = np.meshgrid(np.arange(1, k), np.arange(1, k), indexing="ij")
        keep = i + j < k
        grid = np.stack([i[keep] / k, j[keep] / k, 1 - (i[keep] + j[keep]) / k], axis=1)
    terms = v * (L * grid) ** (-theta)
    vals = terms.sum(axis=1) if mode == "sum" else terms.max(axis=1)
    best = float(vals.min())
    closed = allocation_objective(v, L * allocation_weights(v, theta, mode), theta, mode)
    return {"closed_form": closed, "grid_best": best, "pass": closed <= best * (1 + 1e-12)}


# ---------------------------------------------------------------------------
# combinatorial check


def enum_check(ns=(2, 3, 4, 5), ds=(1, 2), Ls=(1, 2, 3), seed: int = 0) -> dict:
    """Split-tree counts against the ``(d n)^L`` bound on random point sets."""
    rows = []
    for n, d, L in itertools.product(ns, ds, Ls):
        if d * n < 2:
            continue
        x = stream(seed, "enum", n, d).random((n, d))
        e = enumerate_valid_partitions(Dataset(x, np.zeros(n)), L)
        rows.append({"n": n, "d": d, "L": L, "count": e.count, "bound": e.bound, "ok": e.within_bound})
    hand = {
        "n2_d1_L2": enumerate_valid_partitions(Dataset(np.array([[0.3], [0.7]]), np.zeros(2)), 2).count,
        "n2_d2_L2": enumerate_valid_partitions(Dataset(np.array([[0.3, 0.6], [0.7, 0.2]]), np.zeros(2)), 2).count,
    }
    ok = all(r["ok"] for r in rows) and hand == {"n2_d1_L2": 3, "n2_d2_L2": 5}
    return {"rows": rows, "hand_cases": hand, "pass": ok}
