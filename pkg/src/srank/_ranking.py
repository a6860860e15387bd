"""Within-group ordering shared by training and evaluation.

Items are ranked by score descending; equal scores fall back to item id
ascending, encoded as integer tie keys.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def item_tie_keys(*item_arrays: np.ndarray) -> list[np.ndarray]:
    """Integer keys preserving the string order of item ids across all arrays."""
    sizes = [len(a) for a in item_arrays]
    if sum(sizes) == 0:
        return [np.zeros(0, dtype=np.int64) for _ in item_arrays]
    joined = np.concatenate([np.asarray(a, dtype=object) for a in item_arrays]).astype(str)
    _, inverse = np.unique(joined, return_inverse=True)
    inverse = inverse.astype(np.int64)
    return np.split(inverse, np.cumsum(sizes)[:-1])


@njit(cache=True)
def group_order(scores, tie):
    first = np.argsort(tie, kind="mergesort")
    second = np.argsort(-scores[first], kind="mergesort")
    return first[second]


@njit(cache=True)
def group_reciprocal_ranks(scores, labels, offsets, tie):
    n_groups = len(offsets) - 1
    rr = np.zeros(n_groups)
    for g in range(n_groups):
        lo = offsets[g]
        hi = offsets[g + 1]
        if hi == lo:
            continue
        order = group_order(scores[lo:hi], tie[lo:hi])
        for pos in range(hi - lo):
            if labels[lo + order[pos]] > 0:
                rr[g] = 1.0 / (pos + 1)
                break
    return rr
