"""Shared domain types: datasets, cells, tree models and losses.

Split semantics follow a single convention everywhere: a split ``(dim, tau)``
sends ``x[dim] <= tau`` to the left child and ``x[dim] > tau`` to the right.
Coordinates that tie therefore always travel together, so the partition a
tree induces on a sample is a function of the coordinate ranks alone.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DataError, DimensionError, EmptyLeafError, LabelError


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    ZERO_ONE = "zero_one"

    @classmethod
    def parse(cls, value: Union[str, "LossKind"]) -> "LossKind":
        if isinstance(value, LossKind):
            return value
        aliases = {
            "squared": cls.SQUARED, "reg": cls.SQUARED, "regression": cls.SQUARED,
            "zero_one": cls.ZERO_ONE, "zero-one": cls.ZERO_ONE,
            "cls": cls.ZERO_ONE, "classification": cls.ZERO_ONE,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise DataError(f"unknown loss kind {value!r}") from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` labelled points in ``[0, 1]^d`` plus per-dimension rank structure.

    ``distinct[j]`` is the strictly increasing array of unique values of
    column ``j`` and ``ranks[i, j]`` the index of ``x[i, j]`` in it.
    ``order[j]`` is a stable argsort of column ``j``.
    """

    x: np.ndarray
    y: np.ndarray
    distinct: tuple = field(init=False, repr=False)
    ranks: np.ndarray = field(init=False, repr=False)
    order: tuple = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"x must be a non-empty n x d matrix, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise DataError("non-finite values in dataset")
        if x.min() < 0.0 or x.max() > 1.0:
            raise DataError("every coordinate must lie in [0, 1]")
        distinct, ranks, order = [], np.empty(x.shape, dtype=np.int64), []
        for j in range(x.shape[1]):
            vals, inv = np.unique(x[:, j], return_inverse=True)
            distinct.append(_readonly(vals))
            ranks[:, j] = inv
            order.append(_readonly(np.argsort(x[:, j], kind="stable")))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "distinct", tuple(distinct))
        object.__setattr__(self, "ranks", _readonly(ranks))
        object.__setattr__(self, "order", tuple(order))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])

    def is_binary(self) -> bool:
        return bool(np.all((self.y == 0.0) | (self.y == 1.0)))

    def n_distinct_rows(self) -> int:
        return int(np.unique(self.ranks, axis=0).shape[0])


@dataclass(frozen=True)
class Cell:
    """Axis-aligned box in rank coordinates.

    ``bounds[j] = (lo, hi)`` stands for the interval ``(v[lo], v[hi]]`` of
    dimension ``j``, where ``v = data.distinct[j]``; ``lo == -1`` means the
    box reaches down to 0 (closed) and ``hi == len(v) - 1`` that it reaches
    up to 1 (closed).
    """

    bounds: tuple

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not lo < hi:
                raise DataError(f"empty cell interval ({lo}, {hi}]")

    @classmethod
    def root(cls, data: Dataset) -> "Cell":
        return cls(tuple((-1, len(v) - 1) for v in data.distinct))

    def split(self, dim: int, rank: int) -> tuple["Cell", "Cell"]:
        lo, hi = self.bounds[dim]
        if not lo < rank < hi:
            raise DataError(f"threshold rank {rank} not inside ({lo}, {hi}]")
        left = list(self.bounds)
        right = list(self.bounds)
        left[dim] = (lo, rank)
        right[dim] = (rank, hi)
        return Cell(tuple(left)), Cell(tuple(right))

    def mask(self, data: Dataset) -> np.ndarray:
        r = data.ranks
        m = np.ones(data.n, dtype=bool)
        for j, (lo, hi) in enumerate(self.bounds):
            m &= (r[:, j] > lo) & (r[:, j] <= hi)
        return m

    def contains(self, x: Sequence[float], data: Dataset) -> bool:
        for j, (lo, hi) in enumerate(self.bounds):
            v = data.distinct[j]
            left_ok = x[j] >= 0.0 if lo == -1 else x[j] > v[lo]
            right_ok = x[j] <= 1.0 if hi == len(v) - 1 else x[j] <= v[hi]
            if not (left_ok and right_ok):
                return False
        return True

    def geometry(self, data: Dataset) -> list[tuple[float, float]]:
        """Real-valued ``[lo, hi]`` extent per dimension."""
        out = []
        for j, (lo, hi) in enumerate(self.bounds):
            v = data.distinct[j]
            out.append((0.0 if lo == -1 else float(v[lo]), 1.0 if hi == len(v) - 1 else float(v[hi])))
        return out


# ---------------------------------------------------------------------------
# tree models


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class Split:
    dim: int
    tau: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class RiskValue:
    total: float
    mean: float
    n: int


@dataclass(frozen=True)
class TreeModel:
    """Piecewise-constant function given by a binary axis-aligned tree.

    ``sup_bound`` is the clipping level ``M`` for regression models
    (``math.inf`` for no clipping) and ``None`` for classification models.
    """

    root: Node
    d: int
    loss: LossKind = LossKind.SQUARED
    sup_bound: float | None = math.inf

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if self.loss is LossKind.ZERO_ONE:
            object.__setattr__(self, "sup_bound", None)
        else:
            object.__setattr__(self, "sup_bound", math.inf if self.sup_bound is None else float(self.sup_bound))
        for node in self.nodes():
            if isinstance(node, Split):
                if not 0 <= node.dim < self.d:
                    raise DimensionError(f"split dimension {node.dim} outside 0..{self.d - 1}")
            elif self.loss is LossKind.ZERO_ONE:
                if node.value not in (0.0, 1.0):
                    raise DataError(f"classification leaf value {node.value} not in {{0, 1}}")
            elif abs(node.value) > self.sup_bound:
                raise DataError(f"leaf value {node.value} exceeds sup bound {self.sup_bound}")

    def nodes(self) -> Iterable[Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, Split):
                stack.append(node.right)
                stack.append(node.left)

    @property
    def n_leaves(self) -> int:
        return sum(isinstance(n, Leaf) for n in self.nodes())

    @property
    def n_internal(self) -> int:
        return sum(isinstance(n, Split) for n in self.nodes())

    def leaves(self) -> list[Leaf]:
        return [n for n in self.nodes() if isinstance(n, Leaf)]

    def thresholds(self) -> list[tuple[int, float]]:
        return [(n.dim, n.tau) for n in self.nodes() if isinstance(n, Split)]

    def is_valid_for(self, data: Dataset) -> bool:
        """True when every threshold is an observed value of its dimension."""
        for dim, tau in self.thresholds():
            v = data.distinct[dim]
            k = np.searchsorted(v, tau)
            if k >= len(v) or v[k] != tau:
                return False
        return True

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.d:
            raise DimensionError(f"point has dimension {x.shape[0]}, model expects {self.d}")
        node = self.root
        while isinstance(node, Split):
            node = node.left if x[node.dim] <= node.tau else node.right
        return node.value

    def predict_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.d == 1 else X[None, :]
        if X.shape[1] != self.d:
            raise DimensionError(f"points have dimension {X.shape[1]}, model expects {self.d}")
        out = np.empty(X.shape[0])
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.value
                continue
            go_left = X[idx, node.dim] <= node.tau
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def leaf_index_many(self, X) -> np.ndarray:
        """Index (in :meth:`leaves` order) of the leaf containing each row."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0], dtype=np.int64)
        counter = 0
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = counter
                counter += 1
                continue
            go_left = X[idx, node.dim] <= node.tau
            stack.append((node.right, idx[~go_left]))
            stack.append((node.left, idx[go_left]))
        return out

    def boxes(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        """Leaves as ``(lower, upper, value)`` boxes clipped to the unit cube."""
        out = []
        stack = [(self.root, np.zeros(self.d), np.ones(self.d))]
        while stack:
            node, lo, hi = stack.pop()
            if isinstance(node, Leaf):
                out.append((lo, hi, node.value))
                continue
            lhi = hi.copy()
            lhi[node.dim] = min(hi[node.dim], node.tau)
            rlo = lo.copy()
            rlo[node.dim] = max(lo[node.dim], node.tau)
            stack.append((node.right, rlo, hi))
            stack.append((node.left, lo, lhi))
        return out

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        def enc(node):
            if isinstance(node, Leaf):
                return {"value": node.value}
            return {"dim": node.dim, "tau": node.tau, "left": enc(node.left), "right": enc(node.right)}

        sup = self.sup_bound
        return {
            "loss": self.loss.value,
            "d": self.d,
            "sup_bound": None if sup is None or math.isinf(sup) else sup,
            "tree": enc(self.root),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeModel":
        def dec(obj):
            if "value" in obj:
                return Leaf(float(obj["value"]))
            return Split(int(obj["dim"]), float(obj["tau"]), dec(obj["left"]), dec(obj["right"]))

        loss = LossKind.parse(doc["loss"])
        sup = doc.get("sup_bound")
        if loss is LossKind.SQUARED and sup is None:
            sup = math.inf
        return cls(dec(doc["tree"]), int(doc["d"]), loss, sup)

    @classmethod
    def from_json(cls, text: str) -> "TreeModel":
        return cls.from_dict(json.loads(text))

    @classmethod
    def constant(cls, value: float, d: int, loss=LossKind.SQUARED, sup_bound=math.inf) -> "TreeModel":
        return cls(Leaf(float(value)), d, loss, sup_bound)


# ---------------------------------------------------------------------------
# losses


def leaf_value(ys, loss=LossKind.SQUARED, M: float = math.inf) -> float:
    """Optimal constant for a leaf: clipped mean, or majority vote (ties -> 1)."""
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if ys.size == 0:
        raise EmptyLeafError("cannot fit a value to an empty leaf")
    loss = LossKind.parse(loss)
    if loss is LossKind.ZERO_ONE:
        return 1.0 if 2.0 * ys.sum() >= ys.size else 0.0
    mean = math.fsum(ys) / ys.size
    if M is None:
        return mean
    return min(max(mean, -M), M)


def pointwise_loss(y, pred, loss) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if LossKind.parse(loss) is LossKind.ZERO_ONE:
        return (y != pred).astype(float)
    return (y - pred) ** 2


def check_labels(y) -> None:
    y = np.asarray(y)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError("zero-one loss needs labels in {0, 1}")


def empirical_risk(model: TreeModel, data: Dataset, loss=None) -> RiskValue:
    loss = model.loss if loss is None else LossKind.parse(loss)
    if loss is not model.loss:
        raise DataError(f"loss {loss.value} incompatible with a {model.loss.value} model")
    if data.d != model.d:
        raise DimensionError(f"data has dimension {data.d}, model expects {model.d}")
    if loss is LossKind.ZERO_ONE:
        check_labels(data.y)
    losses = pointwise_loss(data.y, model.predict_many(data.x), loss)
    total = math.fsum(losses)
    return RiskValue(total=total, mean=total / data.n, n=data.n)


# ---------------------------------------------------------------------------
# files


def read_csv(path_or_text, *, text: bool = False) -> Dataset:
    """Read a dataset from CSV with header ``x1..xd,y``."""
    try:
        if text:
            handle = io.StringIO(path_or_text)
        else:
            handle = open(path_or_text, newline="")
    except OSError as exc:
        raise DataError(f"cannot open dataset: {exc}") from exc
    with handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise DataError("empty CSV file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header[-1] != "y" or header[:-1] != [f"x{j + 1}" for j in range(d)]:
        raise DataError(f"CSV header must be x1..xd,y, got {header}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataError("CSV has no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise DataError(f"malformed CSV value: {exc}") from exc
    if arr.ndim != 2 or arr.shape[1] != d + 1:
        raise DataError("ragged CSV rows")
    return Dataset(arr[:, :d], arr[:, d])


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(data.d)] + ["y"])
    for xi, yi in zip(data.x, data.y):
        w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    return buf.getvalue()
