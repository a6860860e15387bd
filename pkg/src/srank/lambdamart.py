"""LambdaMART: boosted regression trees on pairwise reciprocal-rank lambdas."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numba import njit

from ._ranking import group_order, group_reciprocal_ranks, item_tie_keys
from .instances import RankingDataset
from .tree import FeatureBinner, RegressionTree, fit_tree_binned

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class BoostConfig:
    max_trees: int = 500
    learning_rate: float = 0.1
    max_leaves: int = 16
    min_instances_per_leaf: int = 10
    sigma: float = 1.0
    early_stop_patience: int = 50
    seed: int = 0  # no stochastic steps today; recorded for reproducibility
    max_bins: int = 255

    def __post_init__(self) -> None:
        if self.max_trees < 0:
            raise ValueError("max_trees must be >= 0")
        if not (self.learning_rate > 0 and self.sigma > 0):
            raise ValueError("learning_rate and sigma must be positive")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        for name, low in (("min_instances_per_leaf", 1), ("early_stop_patience", 1), ("max_bins", 2)):
            if getattr(self, name) < low:
                raise ValueError(f"{name} must be >= {low}")


@njit(cache=True)
def _pair_terms(si, sj, ri, rj, others, r1, sigma):
    # i takes j's position; the first positive after the swap
    first = rj if rj < others else others
    delta = abs(1.0 / first - 1.0 / r1)
    rho = 1.0 / (1.0 + math.exp(sigma * (si - sj)))
    return -sigma * rho * delta, sigma * sigma * rho * (1.0 - rho) * delta


@njit(cache=True)
def _lambdas_kernel(scores, labels, offsets, tie, sigma, lam, hess):
    big = np.iinfo(np.int64).max
    for g in range(len(offsets) - 1):
        lo = offsets[g]
        hi = offsets[g + 1]
        n = hi - lo
        if n < 2:
            continue
        s = scores[lo:hi]
        y = labels[lo:hi]
        order = group_order(s, tie[lo:hi])
        rank = np.empty(n, dtype=np.int64)
        for pos in range(n):
            rank[order[pos]] = pos + 1
        r1 = big
        r2 = big
        for i in range(n):
            if y[i] > 0:
                r = rank[i]
                if r < r1:
                    r2 = r1
                    r1 = r
                elif r < r2:
                    r2 = r
        if r1 == big:
            continue
        # first pass: size a fixed-point grid so every partial sum is exact
        largest = 0.0
        pairs = 0
        for i in range(n):
            if y[i] <= 0:
                continue
            others = r2 if rank[i] == r1 else r1
            for j in range(n):
                if y[j] < y[i]:
                    lij, _ = _pair_terms(s[i], s[j], rank[i], rank[j], others, r1, sigma)
                    largest = max(largest, abs(lij))
                    pairs += 1
        if largest == 0.0:
            continue
        bits = 0
        while (1 << bits) < pairs + 1:
            bits += 1
        _, e = math.frexp(largest)
        scale = 2.0 ** (52 - bits - e)
        for i in range(n):
            if y[i] <= 0:
                continue
            others = r2 if rank[i] == r1 else r1
            for j in range(n):
                if y[j] >= y[i]:
                    continue
                lij, h = _pair_terms(s[i], s[j], rank[i], rank[j], others, r1, sigma)
                lij = np.floor(lij * scale + 0.5) / scale
                lam[lo + i] -= lij
                lam[lo + j] += lij
                hess[lo + i] += h
                hess[lo + j] += h


def compute_lambdas(
    scores: np.ndarray,
    labels: np.ndarray,
    offsets: np.ndarray,
    sigma: float = 1.0,
    tie_keys: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise lambdas and their second-order weights for every instance.

    ``|delta M|`` is the change in the group's reciprocal rank when the
    positive and negative item of a pair swap positions. Positive lambdas
    push an item up. Pair lambdas are rounded to a per-group power-of-two
    grid fine enough to keep 52 - log2(pairs) bits of the largest one, so
    each group's lambdas sum to exactly zero.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if tie_keys is None:
        tie_keys = np.arange(len(scores), dtype=np.int64)
    lam = np.zeros(len(scores))
    hess = np.zeros(len(scores))
    _lambdas_kernel(scores, labels, offsets, np.ascontiguousarray(tie_keys, dtype=np.int64), float(sigma), lam, hess)
    return lam, hess


@dataclass
class TreeEnsemble:
    trees: list[RegressionTree]
    learning_rate: float
    feature_schema: tuple[str, ...]
    best_iteration: int
    training_log: list[dict[str, Any]] = field(default_factory=list)

    def predict(self, X: np.ndarray, feature_names: Sequence[str] | None = None) -> np.ndarray:
        if feature_names is not None and tuple(feature_names) != self.feature_schema:
            raise ValueError(
                f"feature schema mismatch: model expects {list(self.feature_schema)}, got {list(feature_names)}"
            )
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.feature_schema):
            raise ValueError(f"expected {len(self.feature_schema)} features, got {X.shape[1]}")
        out = np.zeros(len(X))
        for tree in self.trees[: self.best_iteration]:
            out += self.learning_rate * tree.predict(X)
        return out

    def predict_dataset(self, ds: RankingDataset) -> np.ndarray:
        return self.predict(ds.features, ds.feature_names)

    def to_json(self) -> dict[str, Any]:
        return {
            "feature_schema": list(self.feature_schema),
            "learning_rate": self.learning_rate,
            "best_iteration": self.best_iteration,
            "trees": [t.to_json() for t in self.trees],
            "training_log": self.training_log,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TreeEnsemble":
        return cls(
            trees=[RegressionTree.from_json(t) for t in obj["trees"]],
            learning_rate=obj["learning_rate"],
            feature_schema=tuple(obj["feature_schema"]),
            best_iteration=obj["best_iteration"],
            training_log=obj.get("training_log", []),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "TreeEnsemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def score(model: TreeEnsemble, features: np.ndarray | dict[str, float], feature_names: Sequence[str] | None = None):
    """Score one instance (a name->value mapping or a vector) or a matrix of instances."""
    if isinstance(features, dict):
        if set(features) != set(model.feature_schema):
            raise ValueError("feature schema mismatch")
        return float(model.predict(np.array([[features[n] for n in model.feature_schema]]))[0])
    X = np.asarray(features, dtype=np.float64)
    out = model.predict(X, feature_names)
    return float(out[0]) if X.ndim == 1 else out


def train_lambdamart(train: RankingDataset, validation: RankingDataset, config: BoostConfig = BoostConfig()) -> TreeEnsemble:
    if len(train) == 0:
        raise ValueError("empty training set")
    if tuple(train.feature_names) != tuple(validation.feature_names):
        raise ValueError("train and validation feature schemas differ")

    train_tie, val_tie = item_tie_keys(train.item_ids, validation.item_ids)
    binner = FeatureBinner(train.features, config.max_bins)
    bins = binner.transform(train.features)
    labels = train.labels.astype(np.int64)
    val_labels = validation.labels.astype(np.int64)

    scores = np.zeros(len(train))
    val_scores = np.zeros(len(validation))
    trees: list[RegressionTree] = []
    log: list[dict[str, Any]] = []
    best_mrr, best_it = -math.inf, 0

    for it in range(1, config.max_trees + 1):
        lam, hess = compute_lambdas(scores, labels, train.offsets, config.sigma, train_tie)
        group_sums = np.add.reduceat(lam, train.offsets[:-1]) if train.n_groups else np.zeros(0)
        tree, leaf_of = fit_tree_binned(bins, binner, lam, hess, config.max_leaves, config.min_instances_per_leaf)
        trees.append(tree)
        scores += config.learning_rate * tree.value[leaf_of]
        if len(validation):
            val_scores += config.learning_rate * tree.predict(validation.features)
            val_mrr = float(group_reciprocal_ranks(val_scores, val_labels, validation.offsets, val_tie).mean())
        else:
            val_mrr = 0.0
        train_mrr = float(group_reciprocal_ranks(scores, labels, train.offsets, train_tie).mean())
        log.append({
            "iteration": it,
            "train_mrr": train_mrr,
            "validation_mrr": val_mrr,
            "max_abs_group_lambda_sum": float(np.max(np.abs(group_sums))) if len(group_sums) else 0.0,
            "leaves": tree.n_leaves,
        })
        if val_mrr > best_mrr:
            best_mrr, best_it = val_mrr, it
        elif it - best_it >= config.early_stop_patience:
            logger.info("early stop at iteration %d (best %d, validation MRR %.4f)", it, best_it, best_mrr)
            break

    return TreeEnsemble(trees, config.learning_rate, tuple(train.feature_names), best_it, log)
