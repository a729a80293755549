"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion is a ``run_*`` function returning its serialized outputs
(CSV/JSON text) plus a verdict; the determinism criterion re-executes all of
them with the same master seeds and compares the bytes.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from ermtree.core import Dataset, LossKind, empirical_risk
from ermtree.evaluation import margin_profile
from ermtree.ratelab import (RegressionWorld, ScaledHypercubeWorld, Schedule, alloc_check, enum_check,
                             heavy_tail_comparison, oracle_inequality_check, run_approx_sweep, run_rate_sweep,
                             simplex_grid_check)
from ermtree.rng import stream
from ermtree.solver import FitConfig, Penalty, brute_force_fit, fit_constrained, fit_penalized_detail, risk_frontier
from ermtree.synth import (LinearRamp, NoiseModel, holder_seminorm_estimate, make_hypercube, make_pshab)

SQ, ZO = LossKind.SQUARED, LossKind.ZERO_ONE


def regression_world():
    # 1D Lipschitz bump truth: two opposite-signed bumps of height 0.8
    return RegressionWorld(make_pshab(7, 1, B=1, s=1, lambda_range=(12.0, 12.0), bumps_per_piece=2), s=1, abar=1.0)


def announce(capsys, number, title, ok, detail, seconds):
    with capsys.disabled():
        print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}  ({seconds:.1f}s)")


def _dump(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# --- exact objectives for the oracle comparison ----------------------------------------

def _exact_objective(model, data, loss, M):
    """Optimal objective of the data partition induced by ``model``, in rational arithmetic."""
    leaf = model.leaf_index_many(data.x)
    total = Fraction(0)
    for k in np.unique(leaf):
        ys = [Fraction(float(v)) for v in data.y[leaf == k]]
        if loss is ZO:
            ones = sum(1 for v in ys if v == 1)
            total += min(ones, len(ys) - ones)
        else:
            c = sum(ys) / len(ys)
            if M != math.inf:
                c = min(max(c, -Fraction(M)), Fraction(M))
            total += sum((v - c) ** 2 for v in ys)
    return total


def _random_instance(rng, loss):
    n, d = int(rng.integers(1, 9)), int(rng.integers(1, 3))
    x = np.round(rng.random((n, d)), 1)  # coarse grid: forces ties
    y = rng.integers(0, 2, n).astype(float) if loss is ZO else np.round(rng.normal(size=n), 2)
    return Dataset(x, y)


# --- criteria -----------------------------------------------------------------------------

def run_1():
    rng = stream(2024, "acceptance", 1)
    rows, ok = [], True
    for i in range(200):
        loss = SQ if i % 2 == 0 else ZO
        data = _random_instance(rng, loss)
        L = int(rng.integers(1, 5))
        M = [0.5, 1.0, math.inf][int(rng.integers(3))]
        cfg = FitConfig(max_leaves=L, loss=loss, sup_bound=M)
        exact, brute = fit_constrained(data, cfg), brute_force_fit(data, cfg)
        a, b = _exact_objective(exact, data, loss, M), _exact_objective(brute, data, loss, M)
        same = a == b and empirical_risk(exact, data).total == empirical_risk(brute, data).total
        ok &= same
        rows.append([i, loss.value, data.n, data.d, L, None if M == math.inf else M, str(a), same])
    return {"instances.json": _dump(rows)}, ok, f"{sum(r[-1] for r in rows)}/200 exact matches"


def run_2():
    res = enum_check((2, 3, 4, 5), (1, 2), (1, 2, 3), seed=0)
    worst = max(r["count"] / r["bound"] for r in res["rows"])
    return {"summary.json": _dump(res)}, res["pass"], f"hand cases {res['hand_cases']}, max count/bound {worst:.3f}"


def run_3():
    rng = stream(2024, "acceptance", 3)
    monotone = interp = agree = 0
    rows = []
    for i in range(100):
        loss = SQ if i % 2 == 0 else ZO
        n, d = int(rng.integers(2, 13)), int(rng.integers(1, 3))
        x = rng.random((n, d))
        y = rng.integers(0, 2, n).astype(float) if loss is ZO else rng.normal(size=n)
        data = Dataset(x, y)
        M = float(np.abs(y).max()) if loss is SQ else math.inf
        front = risk_frontier(data, loss, M, n)
        monotone += bool(np.all(np.diff(front.values) <= 0))
        interp += empirical_risk(front.tree(n), data).total == 0.0
        lam = float(rng.uniform(0.0, 0.3))
        direct = fit_penalized_detail(data, FitConfig(loss=loss, sup_bound=M, penalty=Penalty(lam, 1.0)))
        _, obj = front.penalized_choice(Penalty(lam, 1.0))
        agree += math.isclose(direct.objective, obj, rel_tol=1e-12, abs_tol=1e-12)
        rows.append([i, loss.value, n, d, repr(lam), repr(float(obj))])
    ok = monotone == interp == agree == 100
    return ({"instances.json": _dump(rows)}, ok,
            f"monotone {monotone}/100, interpolation {interp}/100, penalized agreement {agree}/100")


def run_4():
    rep = run_rate_sweep(regression_world(), NoiseModel.gaussian(0.25), [256, 512, 1024, 2048, 4096], 20,
                         Schedule(kind="reg", M=1.0, K=0.25, u=1.0), seed=0)
    ok = -0.667 - 0.15 <= rep.slope <= -0.667 + 0.15
    return ({"report.csv": rep.to_csv(), "summary.json": rep.to_json()}, ok,
            f"slope {rep.slope:.3f} +- {rep.slope_stderr:.3f} (target -0.667 +- 0.15)")


def run_5():
    ramp = run_approx_sweep(LinearRamp(), None, [4, 8, 16, 32, 64], grid_n=4096, s=1, abar=1.0)
    closed = 1 / (12 * np.array([4, 8, 16, 32, 64]) ** 2.0)
    bump = make_pshab(0, 2, B=1, s=2, bumps_per_piece=1)
    iso = run_approx_sweep(bump, None, [2, 4, 8, 16, 32], grid_n=2304, s=2, abar=1.0)
    ok = -2.1 <= ramp.slope <= -1.9 and -1.3 <= iso.slope <= -0.7
    detail = (f"ramp slope {ramp.slope:.3f}, max rel. dev. from 1/(12L^2) "
              f"{np.max(np.abs(ramp.medians / closed - 1)):.1e}; 2D bump slope {iso.slope:.3f}")
    files = {"ramp.csv": ramp.to_csv(), "ramp.json": ramp.to_json(), "bump2d.csv": iso.to_csv(),
             "bump2d.json": iso.to_json()}
    return files, ok, detail


def run_6():
    reports = {}
    for rho in (0.0, 1.0):
        world = ScaledHypercubeWorld(rho_=rho, r0=4, n0=512, C_phi=0.5)
        reports[rho] = run_rate_sweep(world, NoiseModel(), [512, 1024, 2048, 4096, 8192], 30,
                                      Schedule.for_classification(rho=rho), seed=0)
    s0, s1 = reports[0.0].slope, reports[1.0].slope
    ok = -0.53 <= s0 <= -0.13 and s1 <= s0 - 0.05
    files = {f"rho{rho:g}.{ext}": (r.to_csv() if ext == "csv" else r.to_json())
             for rho, r in reports.items() for ext in ("csv", "json")}
    return files, ok, f"rho=0 slope {s0:.3f} (theta=1/2), rho=1 slope {s1:.3f} (theta=2/3), gap {s0 - s1:.3f}"


def run_7():
    hc = heavy_tail_comparison(regression_world(), [1024, 2048, 4096, 8192], 40, [3, 50], seed=0)
    checks = hc.checks(0.1)
    files = {f"{k}.csv": r.to_csv() for k, r in hc.reports.items()}
    files["summary.json"] = _dump({**hc.summary(), "checks": checks})
    g, t3, t50 = (hc.reports[k].slope for k in ("gaussian", "t3", "t50"))
    detail = (f"(a) medians t3 >= gaussian: {checks['medians_dominate']}; (b) t3 slope {t3:.3f} vs gaussian "
              f"{g:.3f}: {checks['slope_not_steeper']}; (c) |t50 - gaussian| = {abs(t50 - g):.3f}: "
              f"{checks['light_consistent']}")
    return files, checks["pass"], detail


def run_8():
    tab = oracle_inequality_check(regression_world(), NoiseModel.gaussian(0.25), [512, 2048], [2, 4, 8, 16], u=1.0,
                                  reps=10, seed=0)
    ratio = float(np.max(tab.n_ratio()))
    ok = tab.max_C <= 50 and ratio <= 5
    return ({"report.csv": tab.to_csv(), "summary.json": _dump(tab.summary())}, ok,
            f"max C {tab.max_C:.3f}, max n-ratio {ratio:.2f}")


def run_9():
    # (a) Hölder budget on every piece of several generated targets
    specs = [regression_world().truth] + [
        make_pshab(seed, 3, B=4, s=2, alpha_range=(0.3, 1.0), lambda_range=(0.5, 3.0), bumps_per_piece=2)
        for seed in range(3)]
    worst = 0.0
    for k, spec in enumerate(specs):
        for j, p in enumerate(spec.pieces):
            est = holder_seminorm_estimate(spec, p.lower, p.upper, p.support, p.alpha, 100_000, 10 * k + j)
            worst = max(worst, est / p.Lambda)
    ok_a = worst <= 1.05
    # (b) hypercube margin law at t = b'/2 and 2b'
    hc = make_hypercube(9, 2, B=2, s=1, rho=1.0, r=3, C_phi=0.5)
    bp = hc.b_prime
    prof = margin_profile(hc, None, [bp / 2, 2 * bp], n_mc=1_000_000, seed=0)
    band = 3 * np.sqrt(prof.exact * (1 - prof.exact) / prof.n_mc)
    ok_b = bool(np.all(np.abs(prof.strict - prof.exact) <= band))
    # (c) sparsity: off-support perturbations leave the value unchanged
    rng = stream(2024, "acceptance", 9)
    changed = 0
    for spec in specs[1:]:
        X = rng.random((20_000, spec.d))
        pieces = spec.piece_of(X)
        X2 = X.copy()
        for i in range(X.shape[0]):
            p = spec.pieces[pieces[i]]
            off = [j for j in range(spec.d) if j not in p.support]
            lo, hi = np.asarray(p.lower)[off], np.asarray(p.upper)[off]
            X2[i, off] = lo + (hi - lo) * rng.uniform(0.001, 1.0, len(off))
        changed += int(np.sum(spec(X) != spec(X2)))
    ok_c = changed == 0
    doc = {"holder_worst_ratio": worst, "margin_t": prof.t.tolist(), "margin_mc": prof.strict.tolist(),
           "margin_exact": prof.exact.tolist(), "sparsity_changes": changed}
    detail = (f"(a) worst estimate/Lambda {worst:.3f}; (b) MC {prof.strict.round(5).tolist()} vs Bmw "
              f"{prof.exact.round(5).tolist()} (3 sigma {band.max():.1e}); (c) {changed} changed values")
    return {"summary.json": _dump(doc)}, ok_a and ok_b and ok_c, detail


def run_10():
    batch = alloc_check(1000, seed=0)
    rng = stream(2024, "acceptance", 10)
    grid = []
    for B in (1, 2, 3):
        for _ in range(3):
            v = rng.uniform(0.1, 10.0, size=B)
            res = simplex_grid_check(v, int(rng.integers(B, 100)), float(rng.uniform(0.1, 1.0)), "max", 1e-3)
            grid.append(res)
    ok = batch["pass"] and all(r["pass"] for r in grid)
    return ({"summary.json": _dump({"bracket": batch, "simplex": grid})}, ok,
            f"bracket failures {batch['failures']}/{2 * batch['trials']}, simplex checks "
            f"{sum(r['pass'] for r in grid)}/{len(grid)}")


RUNS = {1: ("oracle equivalence", run_1), 2: ("split-tree count bound", run_2), 3: ("frontier invariants", run_3),
        4: ("regression rate", run_4), 5: ("approximation decay", run_5), 6: ("classification rate", run_6),
        7: ("heavy-tail degradation", run_7), 8: ("oracle-inequality constant", run_8),
        9: ("generator fidelity", run_9), 10: ("leaf allocation", run_10)}
_OUTPUTS = {}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(RUNS))
def test_criterion(number, capsys):
    title, fn = RUNS[number]
    t0 = time.perf_counter()
    files, ok, detail = fn()
    _OUTPUTS[number] = files
    announce(capsys, number, title, ok, detail, time.perf_counter() - t0)
    assert ok, detail


@pytest.mark.slow
def test_criterion_11_determinism(capsys):
    t0 = time.perf_counter()
    mismatched = []
    for number, (_, fn) in sorted(RUNS.items()):
        first = _OUTPUTS.get(number) or fn()[0]
        second = fn()[0]
        if first.keys() != second.keys() or any(first[k].encode() != second[k].encode() for k in first):
            mismatched.append(number)
    ok = not mismatched
    detail = "all runs byte-identical on re-execution" if ok else f"mismatched runs: {mismatched}"
    announce(capsys, 11, "determinism", ok, detail, time.perf_counter() - t0)
    assert ok, detail
