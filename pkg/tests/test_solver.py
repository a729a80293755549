import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ermtree.core import Dataset, LossKind, empirical_risk, leaf_value
from ermtree.errors import ConfigError, GuardRailError
from ermtree.solver import (FitConfig, Penalty, brute_force_fit, enumerate_valid_partitions, fit_constrained,
                            fit_penalized, fit_penalized_detail, greedy_fit, risk_frontier)

SQ, ZO = LossKind.SQUARED, LossKind.ZERO_ONE
ENGINES = ["cells", "segments", "rectangles"]


def random_instance(rng, loss, n=None, d=None, ties=True):
    n = n or int(rng.integers(1, 9))
    d = d or int(rng.integers(1, 3))
    if ties and rng.random() < 0.5:
        x = rng.integers(0, 4, (n, d)) / 4.0
    else:
        x = rng.random((n, d))
    y = rng.integers(0, 2, n).astype(float) if loss is ZO else np.round(rng.normal(size=n), 3)
    return Dataset(x, y)


def _engines_for(d):
    return [e for e in ENGINES if not (e == "segments" and d != 1) and not (e == "rectangles" and d != 2)]


# --- worked examples ----------------------------------------------------------

def test_constrained_regression_example(four_points):
    data = Dataset(four_points, np.array([0.0, 0.0, 1.0, 1.0]))
    model = fit_constrained(data, FitConfig(max_leaves=2, loss=SQ, sup_bound=1.0))
    assert model.n_leaves == 2 and model.root.tau == 0.2 and model.root.dim == 0
    assert (model.root.left.value, model.root.right.value) == (0.0, 1.0)
    assert empirical_risk(model, data).mean == 0.0


def test_constrained_single_leaf(four_points):
    data = Dataset(four_points, np.array([0.0, 0.0, 1.0, 1.0]))
    model = fit_constrained(data, FitConfig(max_leaves=1, loss=SQ, sup_bound=1.0))
    assert model.n_leaves == 1 and model.root.value == 0.5
    assert empirical_risk(model, data).mean == 0.25


@pytest.mark.parametrize("engine", ["auto", "cells", "segments"])
def test_classification_tie_break_picks_smallest_threshold(four_points, engine):
    data = Dataset(four_points, np.array([0.0, 1.0, 0.0, 1.0]))
    model = fit_constrained(data, FitConfig(max_leaves=2, loss=ZO, engine=engine))
    assert empirical_risk(model, data).mean == 0.25
    assert model.root.tau == 0.1


def test_penalized_examples(four_points):
    y = np.array([0.0, 0.0, 1.0, 1.0])
    data = Dataset(four_points, y)
    big = fit_penalized(data, FitConfig(loss=SQ, sup_bound=1.0, penalty=Penalty(10.0)))
    assert big.n_leaves == 1
    zero = fit_penalized(Dataset(four_points, np.array([0.3, 0.1, 0.7, 0.2])), FitConfig(loss=SQ, penalty=Penalty(0.0)))
    assert empirical_risk(zero, Dataset(four_points, np.array([0.3, 0.1, 0.7, 0.2]))).mean == 0.0
    fit = fit_penalized_detail(data, FitConfig(loss=SQ, sup_bound=1.0, penalty=Penalty(0.05)))
    assert fit.model.root.tau == 0.2 and fit.leaves == 2
    assert fit.objective == pytest.approx(0.10, abs=1e-15)


def test_frontier_examples(four_points):
    data = Dataset(four_points, np.array([0.0, 0.0, 1.0, 1.0]))
    assert risk_frontier(data, SQ, 1.0, 4).values_mean.tolist() == [0.25, 0.0, 0.0, 0.0]
    assert risk_frontier(Dataset([[0.4]], [2.0]), SQ, math.inf, 1).values_mean.tolist() == [0.0]
    const = Dataset(four_points, np.ones(4))
    assert risk_frontier(const, ZO, math.inf, 4).values_mean.tolist() == [0.0] * 4


def test_brute_force_examples():
    data = Dataset(np.array([[0.3], [0.7]]), np.array([0.0, 1.0]))
    model = brute_force_fit(data, FitConfig(max_leaves=2, loss=SQ, sup_bound=1.0))
    assert empirical_risk(model, data).mean == 0.0
    one = brute_force_fit(data, FitConfig(max_leaves=1, loss=SQ, sup_bound=1.0))
    assert one.root.value == leaf_value(data.y, SQ, 1.0)


def test_enumeration_examples():
    assert enumerate_valid_partitions(Dataset([[0.3], [0.7]], [0, 0]), 2).count == 3
    assert enumerate_valid_partitions(Dataset([[0.3], [0.7]], [0, 0]), 1).count == 1
    e = enumerate_valid_partitions(Dataset([[0.3, 0.6], [0.7, 0.2]], [0, 0]), 2)
    assert (e.count, e.bound) == (5, 16)


def test_greedy_examples():
    rng = np.random.default_rng(1)
    data = Dataset(rng.random((10, 2)), np.full(10, 0.7))
    assert greedy_fit(data, FitConfig(max_leaves=4, loss=SQ)).n_leaves == 1
    xor = Dataset(np.array([[.2, .2], [.2, .8], [.8, .2], [.8, .8]]), np.array([0.0, 1.0, 1.0, 0.0]))
    exact = fit_constrained(xor, FitConfig(max_leaves=4, loss=ZO))
    assert empirical_risk(exact, xor).mean == 0.0
    assert greedy_fit(xor, FitConfig(max_leaves=4, loss=ZO)).n_leaves == 1
    eager = greedy_fit(xor, FitConfig(max_leaves=4, loss=ZO, allow_zero_gain=True))
    assert empirical_risk(eager, xor).mean == 0.0


# --- errors ------------------------------------------------------------------

def test_config_errors(four_points):
    data = Dataset(four_points, np.zeros(4))
    with pytest.raises(ConfigError):
        FitConfig(max_leaves=0)
    with pytest.raises(ConfigError):
        Penalty(-1.0)
    with pytest.raises(ConfigError):
        Penalty(1.0, 0.0)
    with pytest.raises(ConfigError):
        fit_constrained(data, FitConfig(max_leaves=2, penalty=Penalty(1.0)))
    with pytest.raises(ConfigError):
        fit_penalized(data, FitConfig())


def test_guard_rails():
    rng = np.random.default_rng(0)
    with pytest.raises(GuardRailError):
        brute_force_fit(Dataset(rng.random((11, 1)), np.zeros(11)), FitConfig(max_leaves=2))
    with pytest.raises(GuardRailError):
        brute_force_fit(Dataset(rng.random((5, 1)), np.zeros(5)), FitConfig(max_leaves=5))
    with pytest.raises(GuardRailError):
        enumerate_valid_partitions(Dataset(rng.random((7, 1)), np.zeros(7)), 2)


# --- invariants ---------------------------------------------------------------

@pytest.mark.parametrize("loss", [SQ, ZO])
def test_oracle_equivalence_all_engines(loss):
    rng = np.random.default_rng(11 if loss is SQ else 12)
    for _ in range(60):
        data = random_instance(rng, loss)
        L = int(rng.integers(1, 5))
        M = [0.5, 1.0, math.inf][int(rng.integers(3))] if loss is SQ else math.inf
        brute = empirical_risk(brute_force_fit(data, FitConfig(max_leaves=L, loss=loss, sup_bound=M)), data).total
        for engine in _engines_for(data.d):
            model = fit_constrained(data, FitConfig(max_leaves=L, loss=loss, sup_bound=M, engine=engine))
            assert model.n_leaves <= L
            assert model.is_valid_for(data)
            assert empirical_risk(model, data).total == brute


@given(st.integers(0, 2**32 - 1), st.sampled_from([SQ, ZO]))
def test_frontier_monotone_and_consistent(seed, loss):
    rng = np.random.default_rng(seed)
    data = random_instance(rng, loss, n=int(rng.integers(1, 15)))
    L = data.n
    front = risk_frontier(data, loss, 1.0 if loss is SQ else math.inf, L)
    assert np.all(np.diff(front.values) <= 0)
    for ell in range(1, L + 1):
        tree = front.tree(ell)
        assert tree.n_leaves <= ell
        total = empirical_risk(tree, data).total
        if loss is ZO:
            assert total == front.values[ell - 1]
        else:
            # the DP accumulates sufficient statistics, so it may differ in the last bits
            assert total == pytest.approx(front.values[ell - 1], rel=1e-12, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 2))
def test_interpolation(seed, d):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    data = Dataset(rng.random((n, d)), rng.normal(size=n))
    M = float(np.abs(data.y).max())
    model = fit_constrained(data, FitConfig(max_leaves=n, loss=SQ, sup_bound=M))
    assert empirical_risk(model, data).total == 0.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([SQ, ZO]), st.floats(0.0, 0.5))
def test_penalized_additive_matches_frontier(seed, loss, lam):
    rng = np.random.default_rng(seed)
    data = random_instance(rng, loss, n=int(rng.integers(1, 12)))
    M = 1.0 if loss is SQ else math.inf
    pen = Penalty(lam, 1.0)
    direct = fit_penalized_detail(data, FitConfig(loss=loss, sup_bound=M, penalty=pen))
    front = risk_frontier(data, loss, M, data.n)
    _, obj = front.penalized_choice(pen)
    assert direct.objective == pytest.approx(obj, rel=1e-12, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.3), st.sampled_from([0.5, 2 / 3, 0.75]))
def test_penalized_theta_matches_brute(seed, lam, theta):
    rng = np.random.default_rng(seed)
    data = random_instance(rng, ZO, n=int(rng.integers(1, 9)))
    fit = fit_penalized_detail(data, FitConfig(loss=ZO, penalty=Penalty(lam, theta)))
    assert fit.certified
    best = min(empirical_risk(brute_force_fit(data, FitConfig(max_leaves=L, loss=ZO)), data).mean + lam * L**theta
               for L in range(1, min(4, data.n) + 1))
    # brute force is limited to L <= 4, so it can only be worse
    assert fit.objective <= best + 1e-12


@given(st.integers(0, 2**32 - 1), st.sampled_from([SQ, ZO]))
def test_greedy_never_beats_exact(seed, loss):
    rng = np.random.default_rng(seed)
    data = random_instance(rng, loss, n=int(rng.integers(2, 12)))
    L = int(rng.integers(1, 6))
    cfg = FitConfig(max_leaves=L, loss=loss, sup_bound=1.0 if loss is SQ else math.inf)
    g = greedy_fit(data, cfg)
    assert g.n_leaves <= L and g.is_valid_for(data)
    assert empirical_risk(g, data).total >= empirical_risk(fit_constrained(data, cfg), data).total


@given(st.integers(2, 5), st.integers(1, 2), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_split_tree_count_bound(n, d, L, seed):
    x = np.random.default_rng(seed).random((n, d))
    e = enumerate_valid_partitions(Dataset(x, np.zeros(n)), L)
    assert e.within_bound and e.count <= (d * n) ** L


def test_deterministic_serialization():
    rng = np.random.default_rng(5)
    for loss in (SQ, ZO):
        data = random_instance(rng, loss, n=40, d=2)
        a = fit_constrained(data, FitConfig(max_leaves=6, loss=loss)).to_json()
        b = fit_constrained(Dataset(np.array(data.x), np.array(data.y)), FitConfig(max_leaves=6, loss=loss)).to_json()
        assert a == b


def test_engines_agree_on_larger_instances():
    rng = np.random.default_rng(9)
    for loss in (SQ, ZO):
        data = random_instance(rng, loss, n=30, d=2)
        vals = {e: risk_frontier(data, loss, 1.0, 8, engine=e).values for e in ("cells", "rectangles")}
        if loss is ZO:
            assert np.array_equal(vals["cells"], vals["rectangles"])
        assert np.allclose(vals["cells"], vals["rectangles"], rtol=1e-12, atol=1e-12)
        d1 = random_instance(rng, loss, n=60, d=1)
        a = risk_frontier(d1, loss, 1.0, 10, engine="cells").values
        b = risk_frontier(d1, loss, 1.0, 10, engine="segments").values
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
