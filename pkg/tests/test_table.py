import math

import numpy as np
import pytest

from srank.embed import EmbeddingTable, cosine_similarity, nearest_neighbors, read_embeddings, write_embeddings
from srank.embed.table import read_binary_vectors

from conftest import make_table


@pytest.mark.parametrize("v, w, expected", [
    ((1, 0), (0, 1), 0.0),
    ((2, 2), (1, 1), 1.0),
    ((1, 0), (1, 1), 1 / math.sqrt(2)),
])
def test_cosine_examples(v, w, expected):
    assert cosine_similarity(v, w) == pytest.approx(expected, abs=1e-8)


def test_cosine_zero_vector():
    with pytest.raises(ValueError):
        cosine_similarity((0, 0), (1, 0))


def test_nearest_neighbor_k1():
    table = make_table({"q": (1.0, 0.0), "near": (1.0, 0.2), "far": (-1.0, 0.5)})
    assert [i for i, _ in nearest_neighbors(table, "q", 1)] == ["near"]


def test_nearest_neighbors_all_sorted():
    table = make_table({"q": (1.0, 0.0), "x": (0.0, 1.0), "y": (1.0, 1.0), "z": (-1.0, 0.1), "w": (0.0, 2.0)})
    out = nearest_neighbors(table, "q", 10)
    assert [i for i, _ in out] == ["y", "w", "x", "z"]
    sims = [s for _, s in out]
    assert sims == sorted(sims, reverse=True)


def test_nearest_neighbors_errors():
    table = make_table({"q": (1.0, 0.0), "x": (0.0, 1.0)})
    with pytest.raises(KeyError):
        nearest_neighbors(table, "nope", 1)
    with pytest.raises(ValueError):
        nearest_neighbors(table, "q", 0)


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    table = EmbeddingTable(["a", "b", "c"], rng.normal(size=(3, 5)))
    write_embeddings(table, tmp_path / "e.txt", tmp_path / "e.bin")
    back = read_embeddings(tmp_path / "e.txt")
    assert back.item_ids == table.item_ids
    assert np.array_equal(back.vectors, table.vectors)
    np.testing.assert_array_equal(read_binary_vectors(tmp_path / "e.bin", 5), table.vectors.astype(np.float32))
