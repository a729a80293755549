import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ermtree.core import (Cell, Dataset, Leaf, LossKind, Split, TreeModel, dataset_to_csv, empirical_risk,
                          leaf_value, read_csv)
from ermtree.errors import DataError, DimensionError, EmptyLeafError, LabelError


# --- predict ---------------------------------------------------------------

def test_root_only_model_predicts_its_value():
    model = TreeModel.constant(0.5, 3)
    assert model.predict([0.0, 0.3, 1.0]) == 0.5


def test_boundary_point_goes_left():
    model = TreeModel(Split(0, 0.2, Leaf(0.0), Leaf(1.0)), 1)
    assert model.predict([0.2]) == 0.0
    assert model.predict([0.2000001]) == 1.0


def test_two_level_trace():
    # dim 1 at 0.5, right child splits dim 2 at 0.5; leaves a, b, c
    a, b, c = 1.0, 2.0, 3.0
    model = TreeModel(Split(0, 0.5, Leaf(a), Split(1, 0.5, Leaf(b), Leaf(c))), 2)
    assert model.predict([0.7, 0.3]) == b
    assert model.predict([0.3, 0.9]) == a
    assert model.predict([0.7, 0.9]) == c


def test_predict_dimension_mismatch():
    model = TreeModel.constant(0.0, 2)
    with pytest.raises(DimensionError):
        model.predict([0.1, 0.2, 0.3])
    with pytest.raises(DimensionError):
        model.predict_many(np.zeros((4, 3)))


# --- empirical risk ----------------------------------------------------------

def test_constant_model_squared_risk():
    data = Dataset(np.array([[0.2], [0.6]]), np.array([0.0, 1.0]))
    risk = empirical_risk(TreeModel.constant(0.5, 1), data, LossKind.SQUARED)
    assert risk.mean == 0.25
    assert risk.total == 0.5


def test_interpolator_has_zero_risk(four_points):
    y = np.array([0.3, -0.2, 0.9, 0.1])
    model = TreeModel(Split(0, 0.2, Split(0, 0.1, Leaf(0.3), Leaf(-0.2)),
                            Split(0, 0.8, Leaf(0.9), Leaf(0.1))), 1)
    assert empirical_risk(model, Dataset(four_points, y)).mean == 0.0


def test_classification_example_risk(four_points):
    data = Dataset(four_points, np.array([0.0, 1.0, 0.0, 1.0]))
    model = TreeModel(Split(0, 0.1, Leaf(0.0), Leaf(1.0)), 1, LossKind.ZERO_ONE)
    assert empirical_risk(model, data).mean == 0.25


def test_zero_one_rejects_non_binary_labels(four_points):
    data = Dataset(four_points, np.array([0.0, 2.0, 0.0, 1.0]))
    model = TreeModel.constant(0.0, 1, LossKind.ZERO_ONE)
    with pytest.raises(LabelError):
        empirical_risk(model, data)


def test_loss_mismatch_is_rejected(four_points):
    data = Dataset(four_points, np.zeros(4))
    with pytest.raises(DataError):
        empirical_risk(TreeModel.constant(0.0, 1, LossKind.ZERO_ONE), data, LossKind.SQUARED)


# --- leaf values -------------------------------------------------------------

def test_leaf_value_examples():
    assert leaf_value([3.0, 5.0], LossKind.SQUARED, 1.0) == 1.0
    assert leaf_value([0, 0, 1], LossKind.ZERO_ONE) == 0.0
    assert leaf_value([1, 1], LossKind.ZERO_ONE) == 1.0
    assert leaf_value([0, 1], LossKind.ZERO_ONE) == 1.0  # mean exactly 1/2
    assert leaf_value([1.0, 2.0], LossKind.SQUARED) == 1.5


def test_leaf_value_empty():
    with pytest.raises(EmptyLeafError):
        leaf_value([], LossKind.SQUARED, 1.0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0.1, 4.0), st.integers(0, 2**31))
def test_leaf_value_optimal_squared(ys, M, seed):
    ys = np.asarray(ys)
    v = leaf_value(ys, LossKind.SQUARED, M)
    assert -M <= v <= M
    best = np.sum((ys - v) ** 2)
    cands = np.random.default_rng(seed).uniform(-M, M, 200)
    assert np.all(best <= np.sum((ys[:, None] - cands[None, :]) ** 2, axis=0) + 1e-9)


@given(st.lists(st.sampled_from([0.0, 1.0]), min_size=1, max_size=20))
def test_leaf_value_optimal_zero_one(ys):
    ys = np.asarray(ys)
    v = leaf_value(ys, LossKind.ZERO_ONE)
    assert np.sum(ys != v) <= min(np.sum(ys != 0.0), np.sum(ys != 1.0))


# --- partition property ----------------------------------------------------

def _random_tree(rng, d, depth):
    if depth == 0 or rng.random() < 0.3:
        return Leaf(float(rng.normal()))
    return Split(int(rng.integers(d)), float(rng.random()), _random_tree(rng, d, depth - 1),
                 _random_tree(rng, d, depth - 1))


def _in_box(x, lo, hi):
    # cells are closed at 0 and at their upper face, open at interior lower faces
    return all((x[j] > lo[j] or (lo[j] == 0.0 and x[j] >= 0.0)) and x[j] <= hi[j] for j in range(len(x)))


@given(st.integers(0, 2**31), st.integers(1, 3))
def test_exactly_one_leaf_contains_each_point(seed, d):
    rng = np.random.default_rng(seed)
    model = TreeModel(_random_tree(rng, d, 4), d)
    X = np.vstack([rng.random((50, d)), rng.integers(0, 2, (5, d)).astype(float)])
    boxes = model.boxes()
    idx = model.leaf_index_many(X)
    for i, x in enumerate(X):
        hits = [k for k, (lo, hi, _) in enumerate(boxes) if np.all(hi > lo) and _in_box(x, lo, hi)]
        assert len(hits) <= 1
        # the routed leaf always agrees with the box it lies in
        if hits:
            assert boxes[hits[0]][2] == model.leaves()[idx[i]].value
    assert np.all(model.predict_many(X) == np.array([model.predict(x) for x in X]))


def test_leaf_count_matches_internal_nodes():
    rng = np.random.default_rng(3)
    for _ in range(50):
        model = TreeModel(_random_tree(rng, 2, 5), 2)
        assert model.n_leaves == model.n_internal + 1


@given(st.integers(0, 2**31), st.integers(1, 40))
def test_risk_value_consistency(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    model = TreeModel(_random_tree(rng, 2, 3), 2)
    r = empirical_risk(model, Dataset(X, rng.normal(size=n)))
    assert abs(r.mean * n - r.total) <= 1e-12 * n * max(1.0, r.total)
    yb = rng.integers(0, 2, n).astype(float)
    cls = TreeModel(Split(0, 0.5, Leaf(0.0), Leaf(1.0)), 2, LossKind.ZERO_ONE)
    rc = empirical_risk(cls, Dataset(X, yb))
    # the total is an exact integer count; mean * n recovers it up to one rounding
    assert rc.total == int(rc.total) and round(rc.mean * n) == rc.total
    assert abs(rc.mean * n - rc.total) <= 2 * np.spacing(rc.total + 1.0)
    assert 0.0 <= rc.mean <= 1.0


# --- model invariants ----------------------------------------------------

def test_classification_leaves_must_be_binary():
    with pytest.raises(DataError):
        TreeModel(Leaf(0.5), 1, LossKind.ZERO_ONE)


def test_regression_leaves_respect_sup_bound():
    with pytest.raises(DataError):
        TreeModel(Leaf(2.0), 1, LossKind.SQUARED, 1.0)


def test_validity_against_data(four_points):
    data = Dataset(four_points, np.zeros(4))
    assert TreeModel(Split(0, 0.2, Leaf(0.0), Leaf(1.0)), 1).is_valid_for(data)
    assert not TreeModel(Split(0, 0.5, Leaf(0.0), Leaf(1.0)), 1).is_valid_for(data)


def test_json_round_trip():
    model = TreeModel(Split(1, 0.25, Leaf(-0.5), Split(0, 0.75, Leaf(0.0), Leaf(0.5))), 2, LossKind.SQUARED, 1.0)
    text = model.to_json()
    back = TreeModel.from_json(text)
    assert back.to_json() == text
    assert TreeModel.from_json(TreeModel.constant(0.0, 1).to_json()).sup_bound == math.inf


# --- dataset ---------------------------------------------------------------

def test_dataset_invariants():
    data = Dataset(np.array([[0.5, 0.1], [0.2, 0.1], [0.5, 0.9]]), np.array([1.0, 2.0, 3.0]))
    assert data.n == 3 and data.d == 2
    for j in range(2):
        v = data.distinct[j]
        assert np.all(np.diff(v) > 0)
        assert set(v.tolist()) == set(data.x[:, j].tolist())
        assert np.all(v[data.ranks[:, j]] == data.x[:, j])
    assert data.n_distinct_rows() == 3


@pytest.mark.parametrize("x", [np.array([[1.5]]), np.array([[-0.1]]), np.array([[np.nan]]), np.zeros((0, 1))])
def test_dataset_rejects_bad_coordinates(x):
    with pytest.raises(DataError):
        Dataset(x, np.zeros(x.shape[0]))


def test_cell_membership_matches_bounds():
    rng = np.random.default_rng(0)
    data = Dataset(rng.random((30, 2)), np.zeros(30))
    root = Cell.root(data)
    left, right = root.split(0, 10)
    assert np.all(left.mask(data) ^ right.mask(data))
    for i in range(data.n):
        assert left.contains(data.x[i], data) == left.mask(data)[i]
    with pytest.raises(DataError):
        Cell(((3, 3),))


def test_csv_round_trip_and_errors():
    data = Dataset(np.array([[0.1, 0.2], [0.3, 1.0]]), np.array([0.5, -1.25]))
    back = read_csv(dataset_to_csv(data), text=True)
    assert np.array_equal(back.x, data.x) and np.array_equal(back.y, data.y)
    for bad in ["a,b\n1,2\n", "x1,y\n0.5\n", "x1,y\n0.5,abc\n", "x1,y\n2.0,1\n", ""]:
        with pytest.raises(DataError):
            read_csv(bad, text=True)
