"""Per-impression ranking datasets: feature assembly, high-coverage filtering, splits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import RANKING_WEEK, Catalog, ClickSession, DataError
from .embed.table import EmbeddingTable
from .features import (
    COS_DISTANCE_AVG,
    COS_DISTANCE_LAST,
    MISSING,
    PERSONALIZATION_FEATURES,
    PRICE_RATIO_MEAN,
    TITLE_JACCARD_SIM,
    ClickContext,
    personalization_matrix,
)

logger = logging.getLogger(__name__)

FULL = "full"
HIGH_COVERAGE = "high_coverage"
TRAIN, VALIDATION, TEST = "train", "validation", "test"

FEATURE_SELECTIONS: dict[str, tuple[str, ...]] = {
    "baseline": (),
    "distance_avg": (COS_DISTANCE_AVG,),
    "distance_last": (COS_DISTANCE_LAST,),
    "price_title": (PRICE_RATIO_MEAN, TITLE_JACCARD_SIM),
    "all": PERSONALIZATION_FEATURES,
}


@dataclass(frozen=True)
class RankingInstance:
    query_id: str
    item_id: str
    label: int
    features: dict[str, float]


@dataclass(frozen=True)
class QueryGroup:
    query_id: str
    instances: tuple[RankingInstance, ...]
    context: tuple[str, ...] | None


@dataclass
class RankingDataset:
    """Column-major store of query groups.

    Instances of group ``g`` occupy rows ``offsets[g]:offsets[g + 1]``.
    ``contexts`` keeps each group's recent clicks; it is ``None`` for
    datasets read back from disk.
    """

    query_ids: list[str]
    offsets: np.ndarray
    item_ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]
    variant: str = FULL
    role: str | None = None
    contexts: list[tuple[str, ...]] | None = None

    def __post_init__(self) -> None:
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.item_ids = np.asarray(self.item_ids, dtype=object)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.item_ids), len(self.feature_names))
        if len(self.offsets) != len(self.query_ids) + 1 or self.offsets[-1] != len(self.item_ids):
            raise ValueError("group offsets do not match instance count")

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def n_groups(self) -> int:
        return len(self.query_ids)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def group_index(self) -> np.ndarray:
        """Group number of every instance."""
        return np.repeat(np.arange(self.n_groups), self.group_sizes)

    def group(self, g: int) -> QueryGroup:
        lo, hi = self.offsets[g], self.offsets[g + 1]
        instances = tuple(
            RankingInstance(
                self.query_ids[g],
                self.item_ids[i],
                int(self.labels[i]),
                dict(zip(self.feature_names, self.features[i].tolist())),
            )
            for i in range(lo, hi)
        )
        ctx = self.contexts[g] if self.contexts is not None else None
        return QueryGroup(self.query_ids[g], instances, ctx)

    @property
    def groups(self) -> list[QueryGroup]:
        return [self.group(g) for g in range(self.n_groups)]

    def take(self, group_indices: Sequence[int], keep: np.ndarray | None = None, **changes) -> "RankingDataset":
        """New dataset of the given groups (in that order), optionally masking instances."""
        rows, sizes = [], []
        for g in group_indices:
            idx = np.arange(self.offsets[g], self.offsets[g + 1])
            if keep is not None:
                idx = idx[keep[idx]]
            rows.append(idx)
            sizes.append(len(idx))
        rows_arr = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        return replace(
            self,
            query_ids=[self.query_ids[g] for g in group_indices],
            offsets=offsets,
            item_ids=self.item_ids[rows_arr],
            labels=self.labels[rows_arr],
            features=self.features[rows_arr],
            contexts=None if self.contexts is None else [self.contexts[g] for g in group_indices],
            **changes,
        )

    def select_features(self, names: Sequence[str]) -> "RankingDataset":
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise KeyError(f"dataset has no feature column(s) {missing}")
        cols = [self.feature_names.index(n) for n in names]
        return replace(self, features=self.features[:, cols], feature_names=tuple(names))

    def for_model(self, selection: str) -> "RankingDataset":
        """Project onto the base columns plus one model variant's personalization columns."""
        base = [n for n in self.feature_names if n not in PERSONALIZATION_FEATURES]
        return self.select_features(base + list(FEATURE_SELECTIONS[selection]))

    def coverage(self) -> dict[str, float]:
        """Fraction of instances where each feature is present."""
        if len(self) == 0:
            return {n: 0.0 for n in self.feature_names}
        present = (self.features != MISSING).mean(axis=0)
        return {n: float(p) for n, p in zip(self.feature_names, present)}


def _base_feature_names(sessions: Sequence[ClickSession]) -> tuple[str, ...]:
    for s in sessions:
        for imp in s.impressions:
            for c in imp.candidates:
                return tuple(sorted(imp.base_features[c]))
    return ()


def build_instances(
    sessions: Iterable[ClickSession],
    catalog: Catalog,
    table: EmbeddingTable,
    feature_selection: str = "all",
) -> RankingDataset:
    if feature_selection not in FEATURE_SELECTIONS:
        raise ValueError(f"unknown feature selection {feature_selection!r}; choose from {sorted(FEATURE_SELECTIONS)}")
    sessions = list(sessions)
    for s in sessions:
        if s.period != RANKING_WEEK:
            raise DataError(
                f"session {s.session_id!r} is tagged {s.period!r}; ranking datasets use ranking_week sessions only"
            )
    base_names = _base_feature_names(sessions)
    pers_names = FEATURE_SELECTIONS[feature_selection]

    query_ids, item_ids, labels, blocks, contexts, sizes = [], [], [], [], [], []
    for s in sessions:
        for imp in s.impressions:
            for c in (*imp.candidates, *imp.context_clicks):
                if c not in catalog:
                    raise DataError(f"item {c!r} referenced by impression {imp.query_id!r} is not in the catalog")
            ctx = ClickContext.from_clicks(imp.context_clicks, catalog)
            try:
                base = np.array([[imp.base_features[c][n] for n in base_names] for c in imp.candidates],
                                dtype=np.float64).reshape(len(imp.candidates), len(base_names))
            except KeyError as exc:
                raise DataError(f"impression {imp.query_id!r}: missing base feature {exc.args[0]!r}") from None
            pers = personalization_matrix(imp.candidates, ctx, table, catalog, pers_names)
            blocks.append(np.hstack([base, pers]))
            query_ids.append(imp.query_id)
            item_ids.extend(imp.candidates)
            labels.extend(imp.labels[c] for c in imp.candidates)
            contexts.append(ctx.recent_clicks)
            sizes.append(len(imp.candidates))

    n_cols = len(base_names) + len(pers_names)
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    return RankingDataset(
        query_ids=query_ids,
        offsets=offsets,
        item_ids=np.array(item_ids, dtype=object),
        labels=np.array(labels, dtype=np.int8),
        features=np.vstack(blocks) if blocks else np.zeros((0, n_cols)),
        feature_names=base_names + tuple(pers_names),
        variant=FULL,
        role=None,
        contexts=contexts,
    )


def filter_high_coverage(
    ds: RankingDataset,
    table: EmbeddingTable,
    min_items_train: int = 3,
    min_items_test: int = 20,
) -> RankingDataset:
    """Restrict to instances where every embedding feature is defined.

    Rules, applied in order: drop candidates without an embedding; drop
    groups whose recent clicks have no embedding; drop the candidate equal to
    the most recent embedded click; keep groups with a positive and enough
    candidates left (test groups use the larger minimum).
    """
    if ds.contexts is None:
        raise ValueError("high-coverage filtering needs click contexts; build the dataset in memory")
    if ds.role is None:
        raise ValueError("dataset role must be set before high-coverage filtering")
    min_items = min_items_test if ds.role == TEST else min_items_train

    keep = np.fromiter((item in table for item in ds.item_ids), dtype=bool, count=len(ds))
    kept_groups = []
    for g, ctx in enumerate(ds.contexts):
        last = next((c for c in reversed(ctx) if c in table), None)
        if last is None:
            continue
        lo, hi = ds.offsets[g], ds.offsets[g + 1]
        for i in range(lo, hi):
            if ds.item_ids[i] == last:
                keep[i] = False
        rows = np.arange(lo, hi)[keep[lo:hi]]
        if len(rows) >= min_items and ds.labels[rows].sum() >= 1:
            kept_groups.append(g)
    out = ds.take(kept_groups, keep, variant=HIGH_COVERAGE)
    logger.info("high-coverage filter (%s): %d -> %d groups, %d -> %d instances",
                ds.role, ds.n_groups, out.n_groups, len(ds), len(out))
    return out


def split_dataset(
    ds: RankingDataset,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> tuple[RankingDataset, RankingDataset, RankingDataset]:
    """Shuffle query groups with ``seed`` and cut them into train/validation/test.

    Validation and test sizes are rounded down; the remainder goes to train.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, validation, test)")
    for name, f in zip((TRAIN, VALIDATION, TEST), fractions):
        if not f > 0:
            raise ValueError(f"empty {name} fraction")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError("fractions must sum to 1")
    n = ds.n_groups
    if n < 3:
        raise ValueError(f"need at least 3 query groups to split, got {n}")
    n_val = max(1, math.floor(n * fractions[1] + 1e-9))
    n_test = max(1, math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError("split leaves no training groups")
    order = np.random.default_rng(seed).permutation(n)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(ds.take(sorted(p.tolist()), role=role) for p, role in zip(parts, (TRAIN, VALIDATION, TEST)))


def write_dataset(ds: RankingDataset, path: str | Path) -> None:
    flagged = [n for n in ds.feature_names if n in PERSONALIZATION_FEATURES]
    flag_cols = [ds.feature_names.index(n) for n in flagged]
    header = ["query_id", "item_id", "label", *ds.feature_names, *(f"has_{n}" for n in flagged)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for g, qid in enumerate(ds.query_ids):
            for i in range(ds.offsets[g], ds.offsets[g + 1]):
                row = ds.features[i]
                cells = [qid, ds.item_ids[i], str(int(ds.labels[i]))]
                cells += [repr(float(x)) for x in row]
                cells += ["0" if row[j] == MISSING else "1" for j in flag_cols]
                fh.write("\t".join(cells) + "\n")


def read_dataset(path: str | Path, variant: str = FULL, role: str | None = None) -> RankingDataset:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:3] != ["query_id", "item_id", "label"]:
            raise DataError(f"{path}: unexpected dataset header")
        flags = [h for h in header[3:] if h.startswith("has_")]
        names = tuple(h for h in header[3:] if not h.startswith("has_"))
        n_feat = len(names)
        query_ids, sizes, item_ids, labels, rows = [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(cells)} columns, expected {len(header)}")
            if not query_ids or query_ids[-1] != cells[0]:
                query_ids.append(cells[0])
                sizes.append(0)
            sizes[-1] += 1
            item_ids.append(cells[1])
            labels.append(int(cells[2]))
            values = [float(x) for x in cells[3:3 + n_feat]]
            for flag, bit in zip(flags, cells[3 + n_feat:]):
                if (values[names.index(flag[4:])] != MISSING) != (bit == "1"):
                    raise DataError(f"{path}: line {lineno}: presence flag {flag} disagrees with value")
            rows.append(values)
    if len(set(query_ids)) != len(query_ids):
        raise DataError(f"{path}: query groups are not contiguous")
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    return RankingDataset(
        query_ids=query_ids,
        offsets=offsets,
        item_ids=np.array(item_ids, dtype=object),
        labels=np.array(labels, dtype=np.int8),
        features=np.array(rows, dtype=np.float64).reshape(len(rows), n_feat),
        feature_names=names,
        variant=variant,
        role=role,
    )
