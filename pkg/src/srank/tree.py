"""Histogram-based regression trees fit to LambdaMART gradients."""

from __future__ import annotations

import heapq
import sys
from dataclasses import dataclass
from typing import Any

import numpy as np

from .features import MISSING

# threshold used when every non-missing value goes left
ALL_LEFT = sys.float_info.max
LEAF_EPS = 1e-9


class FeatureBinner:
    """Per-feature cut points learned from training data.

    A value ``x`` lands in bin ``k`` when ``cuts[k-1] < x <= cuts[k]``; the
    missing sentinel gets its own bin ``len(cuts)``.
    """

    def __init__(self, X: np.ndarray, max_bins: int = 255):
        X = np.asarray(X, dtype=np.float64)
        self.cuts: list[np.ndarray] = []
        for f in range(X.shape[1]):
            col = X[:, f]
            values = np.unique(col[col != MISSING])
            if len(values) > max_bins:
                q = np.linspace(0.0, 1.0, max_bins + 1)[1:]
                values = np.unique(np.quantile(values, q, method="inverted_cdf"))
            self.cuts.append(values)

    @property
    def n_bins(self) -> list[int]:
        return [len(c) for c in self.cuts]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape, dtype=np.int32)
        for f, cuts in enumerate(self.cuts):
            col = X[:, f]
            b = np.searchsorted(cuts, col, side="left")
            b = np.minimum(b, max(len(cuts) - 1, 0))
            b[col == MISSING] = len(cuts)
            out[:, f] = b
        return out


@dataclass
class RegressionTree:
    """Binary tree in flat arrays; ``feature[k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while np.any(active):
            r, n = rows[active], node[active]
            x = X[r, self.feature[n]]
            go_left = np.where(x == MISSING, self.missing_left[n], x <= self.threshold[n])
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_json(self) -> dict[str, Any]:
        nodes = []
        for k in range(len(self.feature)):
            if self.feature[k] < 0:
                nodes.append({"value": float(self.value[k])})
            else:
                nodes.append({
                    "feature": int(self.feature[k]),
                    "threshold": float(self.threshold[k]),
                    "missing_left": bool(self.missing_left[k]),
                    "left": int(self.left[k]),
                    "right": int(self.right[k]),
                })
        return {"nodes": nodes}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "RegressionTree":
        nodes = obj["nodes"]
        b = _TreeBuilder()
        for nd in nodes:
            k = b.add_leaf(nd.get("value", 0.0))
            if "feature" in nd:
                b.make_split(k, nd["feature"], nd["threshold"], nd["missing_left"], nd["left"], nd["right"])
        return b.build()


class _TreeBuilder:
    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.missing_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.missing_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def make_split(self, k: int, feature: int, threshold: float, missing_left: bool, left: int, right: int) -> None:
        self.feature[k] = feature
        self.threshold[k] = threshold
        self.missing_left[k] = missing_left
        self.left[k] = left
        self.right[k] = right
        self.value[k] = 0.0

    def build(self) -> RegressionTree:
        return RegressionTree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            missing_left=np.array(self.missing_left, dtype=bool),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=np.float64),
        )


@dataclass
class _Split:
    gain: float
    feature: int
    bin: int
    missing_left: bool


def _best_split(bins: np.ndarray, n_bins: list[int], grad: np.ndarray, min_leaf: int) -> _Split | None:
    n = len(grad)
    if n < 2 * min_leaf:
        return None
    total = grad.sum()
    parent = total * total / n
    eps = 1e-10 * max(float(np.dot(grad, grad)), 1e-300)
    best: _Split | None = None
    for f, nb in enumerate(n_bins):
        if nb == 0:
            continue
        b = bins[:, f]
        s = np.bincount(b, weights=grad, minlength=nb + 1)
        c = np.bincount(b, minlength=nb + 1).astype(np.float64)
        s_miss, c_miss = s[nb], c[nb]
        cs, cc = np.cumsum(s[:nb]), np.cumsum(c[:nb])
        for miss_left in (False, True):
            sl = cs + s_miss if miss_left else cs
            cl = cc + c_miss if miss_left else cc
            sr, cr = total - sl, n - cl
            ok = (cl >= min_leaf) & (cr >= min_leaf)
            if not np.any(ok):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = np.where(ok, sl * sl / cl + sr * sr / cr - parent, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > eps and (best is None or gain[k] > best.gain):
                best = _Split(float(gain[k]), f, k, miss_left)
    return best


def fit_tree_binned(
    bins: np.ndarray,
    binner: FeatureBinner,
    lambdas: np.ndarray,
    hessians: np.ndarray,
    max_leaves: int,
    min_instances_per_leaf: int,
) -> tuple[RegressionTree, np.ndarray]:
    """Best-first growth on pre-binned features.

    Returns the tree and the leaf node reached by every training row.
    """
    n_bins = binner.n_bins
    builder = _TreeBuilder()
    leaf_of = np.zeros(len(lambdas), dtype=np.int64)

    def leaf_value(idx: np.ndarray) -> float:
        return float(lambdas[idx].sum() / (hessians[idx].sum() + LEAF_EPS))

    root_idx = np.arange(len(lambdas))
    builder.add_leaf(leaf_value(root_idx))
    rows = {0: root_idx}
    heap: list[tuple[float, int, _Split]] = []

    def push(node: int) -> None:
        idx = rows[node]
        split = _best_split(bins[idx], n_bins, lambdas[idx], min_instances_per_leaf)
        if split is not None:
            heapq.heappush(heap, (-split.gain, node, split))

    push(0)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, node, split = heapq.heappop(heap)
        idx = rows.pop(node)
        b = bins[idx, split.feature]
        nb = n_bins[split.feature]
        go_left = np.where(b == nb, split.missing_left, b <= split.bin)
        threshold = ALL_LEFT if split.bin == nb - 1 else float(binner.cuts[split.feature][split.bin])
        li, ri = idx[go_left], idx[~go_left]
        left = builder.add_leaf(leaf_value(li))
        right = builder.add_leaf(leaf_value(ri))
        builder.make_split(node, split.feature, threshold, split.missing_left, left, right)
        rows[left], rows[right] = li, ri
        n_leaves += 1
        push(left)
        push(right)

    for node, idx in rows.items():
        leaf_of[idx] = node
    return builder.build(), leaf_of


def fit_regression_tree(
    features: np.ndarray,
    lambdas: np.ndarray,
    hessians: np.ndarray,
    max_leaves: int = 16,
    min_instances_per_leaf: int = 10,
    max_bins: int = 255,
) -> RegressionTree:
    features = np.asarray(features, dtype=np.float64)
    binner = FeatureBinner(features, max_bins)
    tree, _ = fit_tree_binned(binner.transform(features), binner, np.asarray(lambdas, dtype=np.float64),
                              np.asarray(hessians, dtype=np.float64), max_leaves, min_instances_per_leaf)
    return tree
