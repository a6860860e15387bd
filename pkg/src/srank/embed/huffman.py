"""Huffman tree over the vocabulary, used as the hierarchical-softmax output layer."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import Vocabulary


@dataclass(frozen=True)
class HuffmanCoding:
    """Per-word codes and inner-node paths, both in vocabulary index order.

    ``paths[w][k]`` is the inner node whose decision is ``codes[w][k]``;
    inner nodes are numbered 0..V-2 in creation order, so the root is V-2.
    """

    codes: tuple[tuple[int, ...], ...]
    paths: tuple[tuple[int, ...], ...]
    node_count: int

    def __len__(self) -> int:
        return len(self.codes)

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(codes, points, offsets) concatenated for the compiled trainer."""
        offsets = np.zeros(len(self.codes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(c) for c in self.codes])
        codes = np.fromiter((b for c in self.codes for b in c), dtype=np.int8, count=offsets[-1])
        points = np.fromiter((p for ps in self.paths for p in ps), dtype=np.int64, count=offsets[-1])
        return codes, points, offsets

    def weighted_length(self, weights: Sequence[float]) -> float:
        return float(sum(w * len(c) for w, c in zip(weights, self.codes)))


def build_huffman_tree(vocab: Vocabulary | Sequence[int]) -> HuffmanCoding:
    """Build the coding from vocabulary phrase counts (or raw counts in index order).

    Merges the two lightest nodes; equal weights go to the earlier-created
    node, then the lower index. The first node popped becomes the left child
    (bit 0).
    """
    counts = vocab.counts if isinstance(vocab, Vocabulary) else list(vocab)
    n = len(counts)
    if n == 0:
        raise ValueError("cannot build a Huffman tree over an empty vocabulary")
    if n == 1:
        return HuffmanCoding(codes=((),), paths=((),), node_count=0)

    # heap key: (weight, creation stamp, node id); leaves share stamp 0
    heap = [(c, 0, i) for i, c in enumerate(counts)]
    heapq.heapify(heap)
    parent = [0] * (2 * n - 1)
    bit = [0] * (2 * n - 1)
    next_id = n
    while len(heap) > 1:
        w1, _, a = heapq.heappop(heap)
        w2, _, b = heapq.heappop(heap)
        parent[a], bit[a] = next_id, 0
        parent[b], bit[b] = next_id, 1
        heapq.heappush(heap, (w1 + w2, next_id - n + 1, next_id))
        next_id += 1

    root = 2 * n - 2
    codes, paths = [], []
    for leaf in range(n):
        code, path = [], []
        node = leaf
        while node != root:
            code.append(bit[node])
            node = parent[node]
            path.append(node - n)
        codes.append(tuple(reversed(code)))
        paths.append(tuple(reversed(path)))
    return HuffmanCoding(tuple(codes), tuple(paths), n - 1)
