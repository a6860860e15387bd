"""Trained item vectors with similarity queries and their on-disk formats."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ..catalog import DataError


class EmbeddingTable:
    """Input vectors keyed by item id.

    ``internal_node_vectors`` holds the hierarchical-softmax inner nodes and is
    only kept when training asked for it.
    """

    def __init__(
        self,
        item_ids: Sequence[str],
        vectors: np.ndarray,
        internal_node_vectors: np.ndarray | None = None,
        loss_history: Sequence[float] = (),
        stats: Any = None,
    ):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(item_ids):
            raise ValueError("vectors must be a (len(item_ids), dimension) matrix")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        self.item_ids = list(item_ids)
        self.index = {item: i for i, item in enumerate(self.item_ids)}
        if len(self.index) != len(self.item_ids):
            raise ValueError("duplicate item ids in embedding table")
        self.vectors = vectors
        self.internal_node_vectors = internal_node_vectors
        self.loss_history = list(loss_history)
        self.stats = stats
        self._unit: np.ndarray | None = None
        self._id_rank: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.item_ids)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self.index

    def get(self, item_id: str) -> np.ndarray | None:
        i = self.index.get(item_id)
        return None if i is None else self.vectors[i]

    @property
    def unit_vectors(self) -> np.ndarray:
        if self._unit is None:
            norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError("zero-norm embedding vector")
            self._unit = self.vectors / norms
        return self._unit

    def vectors_in_vocab_order(self, vocab) -> np.ndarray:
        order = [self.index[item] for item in vocab.item_ids]
        return np.ascontiguousarray(self.vectors[order])

    def rescaled(self, factors: Iterable[float] | float) -> "EmbeddingTable":
        factors = np.broadcast_to(np.asarray(factors, dtype=np.float64), (len(self),))
        return EmbeddingTable(self.item_ids, self.vectors * factors[:, None])

    def _item_rank(self) -> np.ndarray:
        if self._id_rank is None:
            order = sorted(range(len(self.item_ids)), key=self.item_ids.__getitem__)
            rank = np.empty(len(order), dtype=np.int64)
            rank[order] = np.arange(len(order))
            self._id_rank = rank
        return self._id_rank


def cosine_similarity(v: Sequence[float], w: Sequence[float]) -> float:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0 or nw == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(v, w) / (nv * nw), -1.0, 1.0))


def nearest_neighbors(table: EmbeddingTable, item_id: str, k: int) -> list[tuple[str, float]]:
    """Top-``k`` other items by cosine similarity, ties broken by item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if item_id not in table.index:
        raise KeyError(f"item {item_id!r} has no embedding")
    q = table.index[item_id]
    unit = table.unit_vectors
    sims = np.clip(unit @ unit[q], -1.0, 1.0)
    order = np.lexsort((table._item_rank(), -sims))
    order = order[order != q][:k]
    return [(table.item_ids[i], float(sims[i])) for i in order]


def write_embeddings(table: EmbeddingTable, path: str | Path, binary_path: str | Path | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dimension}\n")
        for item, vec in zip(table.item_ids, table.vectors):
            fh.write(item)
            for x in vec:
                fh.write(" " + repr(float(x)))
            fh.write("\n")
    if binary_path is not None:
        table.vectors.astype("<f4").tofile(binary_path)


def read_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError("embeddings header must be 'vocab_size dimension'")
        n, dim = int(header[0]), int(header[1])
        ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise DataError(f"embeddings line {lineno}: expected {dim} values")
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(ids) != n:
        raise DataError(f"embeddings header announces {n} rows, found {len(ids)}")
    return EmbeddingTable(ids, np.array(rows, dtype=np.float64).reshape(n, dim))


def read_binary_vectors(path: str | Path, dimension: int) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(-1, dimension)
