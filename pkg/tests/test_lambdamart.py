import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srank.features import MISSING
from srank.instances import RankingDataset
from srank.lambdamart import BoostConfig, TreeEnsemble, compute_lambdas, score, train_lambdamart
from srank.tree import RegressionTree


def rr_of(order, labels):
    for pos, i in enumerate(order, start=1):
        if labels[i]:
            return 1.0 / pos
    return 0.0


def brute_lambdas(scores, labels, sigma=1.0):
    """Swap every (positive, negative) pair in the ranked list and recompute RR."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    base = rr_of(order, labels)
    lam, hess = np.zeros(n), np.zeros(n)
    for i in range(n):
        for j in range(n):
            if labels[i] <= labels[j]:
                continue
            swapped = list(order)
            a, b = swapped.index(i), swapped.index(j)
            swapped[a], swapped[b] = j, i
            delta = abs(rr_of(swapped, labels) - base)
            rho = 1.0 / (1.0 + math.exp(sigma * (scores[i] - scores[j])))
            lam[i] += sigma * rho * delta
            lam[j] -= sigma * rho * delta
            hess[i] += sigma ** 2 * rho * (1 - rho) * delta
            hess[j] += sigma ** 2 * rho * (1 - rho) * delta
    return lam, hess


def test_two_docs_equal_scores():
    lam, hess = compute_lambdas(np.zeros(2), np.array([1, 0]), np.array([0, 2]))
    assert lam[0] == 0.25 and lam[1] == -0.25
    assert hess[0] == pytest.approx(0.125)


def test_no_positive_all_zero():
    lam, hess = compute_lambdas(np.array([0.3, 0.1, 0.2]), np.zeros(3), np.array([0, 3]))
    assert not lam.any() and not hess.any()


@given(st.lists(st.tuples(st.floats(-3, 3), st.booleans()), min_size=1, max_size=10),
       st.floats(0.2, 3))
def test_lambdas_match_brute_force(rows, sigma):
    scores = np.array([s for s, _ in rows])
    labels = np.array([int(y) for _, y in rows])
    lam, hess = compute_lambdas(scores, labels, np.array([0, len(rows)]), sigma)
    want_lam, want_hess = brute_lambdas(scores.tolist(), labels.tolist(), sigma)
    np.testing.assert_allclose(lam, want_lam, rtol=1e-9, atol=1e-12 * max(np.abs(want_lam).max(), 1e-300))
    np.testing.assert_allclose(hess, want_hess, rtol=1e-12, atol=1e-15)
    assert lam.sum() == 0.0


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_positive_lambda_always_positive(s_pos, s_neg):
    lam, _ = compute_lambdas(np.array([s_pos, s_neg]), np.array([1, 0]), np.array([0, 2]))
    assert lam[0] > 0 and lam[1] == -lam[0]


def make_ds(features, labels, sizes, names=("f",)):
    offsets = np.r_[0, np.cumsum(sizes)]
    return RankingDataset([f"q{g}" for g in range(len(sizes))], offsets,
                          np.array([f"x{i:04d}" for i in range(len(labels))], dtype=object),
                          np.asarray(labels), np.asarray(features, dtype=float).reshape(len(labels), len(names)),
                          tuple(names))


def separable(n_groups, seed, size=10):
    """One feature that separates sold from unsold items in every group."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(n_groups * size, dtype=int)
    labels[np.arange(n_groups) * size + rng.integers(0, size, n_groups)] = 1
    x = labels + rng.uniform(-0.3, 0.3, size=len(labels))
    return make_ds(x, labels, [size] * n_groups, ("signal",))


def test_separable_reaches_perfect_mrr():
    from srank.evaluation import evaluate

    model = train_lambdamart(separable(60, 0), separable(20, 1), BoostConfig(max_trees=50, min_instances_per_leaf=3))
    assert evaluate(model, separable(40, 2)).mrr >= 0.99
    assert all(row["max_abs_group_lambda_sum"] == 0.0 for row in model.training_log)


def test_zero_trees():
    ds = separable(5, 0)
    model = train_lambdamart(ds, ds, BoostConfig(max_trees=0))
    assert model.trees == [] and not model.predict_dataset(ds).any()


def test_deterministic_and_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    sizes = [8] * 40
    X = rng.normal(size=(320, 3))
    X[rng.random(320) < 0.3, 2] = MISSING
    y = (X[:, 0] + rng.normal(size=320) > 1.2).astype(int)
    ds = make_ds(X, y, sizes, ("a", "b", "c"))
    cfg = BoostConfig(max_trees=20, min_instances_per_leaf=3)
    m1, m2 = train_lambdamart(ds, ds, cfg), train_lambdamart(ds, ds, cfg)
    assert json.dumps(m1.to_json()) == json.dumps(m2.to_json())
    m1.save(tmp_path / "m.json")
    back = TreeEnsemble.load(tmp_path / "m.json")
    assert np.array_equal(back.predict_dataset(ds), m1.predict_dataset(ds))
    log = m1.training_log
    assert log[m1.best_iteration - 1]["validation_mrr"] >= log[0]["validation_mrr"]


def test_group_permutation_and_constant_shift():
    sep = separable(30, 5)
    noise = np.random.default_rng(6).normal(size=len(sep))
    ds = make_ds(np.c_[noise, sep.features], sep.labels, sep.group_sizes, ("noise", "signal"))
    model = train_lambdamart(ds, ds, BoostConfig(max_trees=10, min_instances_per_leaf=3))
    perm = ds.take(list(reversed(range(ds.n_groups))))
    base = dict(zip(zip(np.repeat(ds.query_ids, 10), ds.item_ids), model.predict_dataset(ds)))
    other = dict(zip(zip(np.repeat(perm.query_ids, 10), perm.item_ids), model.predict_dataset(perm)))
    assert base == other
    used = set(int(f) for t in model.trees for f in t.feature if f >= 0)
    if 0 not in used:
        shifted = ds.features.copy()
        shifted[:, 0] += 100.0
        assert np.array_equal(model.predict(shifted, ds.feature_names), model.predict_dataset(ds))


def hand_tree(missing_left):
    return RegressionTree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([missing_left, False, False]),
                          np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0.0, -1.0, 1.0]))


def test_scoring_examples():
    empty = TreeEnsemble([], 0.1, ("f",), 0)
    assert score(empty, {"f": 3.0}) == 0.0
    leaf = RegressionTree(np.array([-1]), np.zeros(1), np.zeros(1, bool), np.array([-1]), np.array([-1]),
                          np.array([2.0]))
    assert score(TreeEnsemble([leaf], 0.1, ("f",), 1), {"f": 3.0}) == pytest.approx(0.2)
    for missing_left, want in ((True, -0.1), (False, 0.1)):
        model = TreeEnsemble([hand_tree(missing_left)], 0.1, ("f",), 1)
        assert score(model, {"f": MISSING}) == pytest.approx(want)


def test_schema_mismatch():
    model = TreeEnsemble([], 0.1, ("a", "b"), 0)
    with pytest.raises(ValueError, match="schema"):
        model.predict(np.zeros((1, 2)), ("b", "a"))
    with pytest.raises(ValueError):
        score(model, {"a": 1.0})
    ds = separable(3, 0)
    with pytest.raises(ValueError, match="empty training set"):
        train_lambdamart(ds.take([]), ds)
    with pytest.raises(ValueError):
        train_lambdamart(ds, make_ds(ds.features, ds.labels, ds.group_sizes, ("other",)))
