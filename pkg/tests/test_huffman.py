from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srank.corpus import Vocabulary
from srank.embed import build_huffman_tree


@lru_cache(maxsize=None)
def optimal_cost(weights: tuple[int, ...]) -> int:
    """Minimum weighted depth over every full binary tree with these leaves.

    Each tree is a sequence of pairwise merges and its cost is the sum of the
    merged weights; trying every pair at every step covers all trees.
    """
    if len(weights) == 1:
        return 0
    best = None
    n = len(weights)
    for i in range(n):
        for j in range(i + 1, n):
            merged = weights[i] + weights[j]
            rest = tuple(sorted(weights[:i] + weights[i + 1:j] + weights[j + 1:] + (merged,)))
            cost = merged + optimal_cost(rest)
            best = cost if best is None else min(best, cost)
    return best


def test_two_equal_words():
    coding = build_huffman_tree([1, 1])
    assert [len(c) for c in coding.codes] == [1, 1]
    assert coding.node_count == 1


def test_forced_shape():
    coding = build_huffman_tree([4, 1, 1])
    assert [len(c) for c in coding.codes] == [1, 2, 2]


def test_single_word():
    coding = build_huffman_tree([7])
    assert coding.codes == ((),) and coding.paths == ((),)


def test_empty_vocab():
    with pytest.raises(ValueError):
        build_huffman_tree([])


def test_matches_exhaustive_optimum():
    rng = np.random.default_rng(5)
    for _ in range(200):
        weights = rng.integers(1, 50, size=int(rng.integers(1, 9))).tolist()
        coding = build_huffman_tree(weights)
        assert coding.weighted_length(weights) == optimal_cost(tuple(sorted(weights)))


@given(st.lists(st.integers(1, 1000), min_size=2, max_size=40))
def test_prefix_free_and_paths(weights):
    coding = build_huffman_tree(weights)
    codes = ["".join(map(str, c)) for c in coding.codes]
    assert all(len(c) == len(p) for c, p in zip(coding.codes, coding.paths))
    for a in codes:
        for b in codes:
            assert a is b or not b.startswith(a)
    root = len(weights) - 2
    assert all(p[0] == root for p in coding.paths)
    assert sum(2.0 ** -len(c) for c in codes) == pytest.approx(1.0)


@given(st.lists(st.integers(1, 10_000), min_size=2, max_size=20, unique=True), st.randoms())
def test_cost_invariant_under_relabeling(weights, rnd):
    shuffled = list(weights)
    rnd.shuffle(shuffled)
    a = build_huffman_tree(weights).weighted_length(weights)
    b = build_huffman_tree(shuffled).weighted_length(shuffled)
    assert a == b


def test_accepts_vocabulary():
    vocab = Vocabulary.from_counts({"x": 4, "y": 1, "z": 1}, 1)
    assert [len(c) for c in build_huffman_tree(vocab).codes] == [1, 2, 2]
