"""Session-context personalization features for a candidate item.

Each feature compares the candidate with the (up to five) items the user
clicked earlier in the same session. A feature that cannot be computed is
reported as absent and carries the ``MISSING`` sentinel value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .catalog import Catalog
from .embed.table import EmbeddingTable, cosine_similarity

MISSING = -999.0
CONTEXT_SIZE = 5

COS_DISTANCE_AVG = "cos_distance_avg"
COS_DISTANCE_LAST = "cos_distance_last"
PRICE_RATIO_MEAN = "price_ratio_mean"
TITLE_JACCARD_SIM = "title_jaccard_sim"
PERSONALIZATION_FEATURES = (COS_DISTANCE_AVG, COS_DISTANCE_LAST, PRICE_RATIO_MEAN, TITLE_JACCARD_SIM)
EMBEDDING_FEATURES = (COS_DISTANCE_AVG, COS_DISTANCE_LAST)
CONTENT_FEATURES = (PRICE_RATIO_MEAN, TITLE_JACCARD_SIM)


class FeatureValue(NamedTuple):
    value: float
    present: bool

    @classmethod
    def absent(cls) -> "FeatureValue":
        return cls(MISSING, False)

    @classmethod
    def of(cls, value: float) -> "FeatureValue":
        return cls(float(value), True)


@dataclass(frozen=True)
class ClickContext:
    """The most recent clicks of a session (oldest first), with their content."""

    recent_clicks: tuple[str, ...]
    prices: Mapping[str, float] = field(default_factory=dict)
    title_tokens: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "recent_clicks", tuple(self.recent_clicks)[-CONTEXT_SIZE:])

    @classmethod
    def from_clicks(cls, clicks: Sequence[str], catalog: Catalog) -> "ClickContext":
        recent = tuple(clicks)[-CONTEXT_SIZE:]
        return cls(
            recent,
            prices={c: catalog[c].price for c in recent},
            title_tokens={c: catalog[c].title_tokens for c in recent},
        )

    def __len__(self) -> int:
        return len(self.recent_clicks)

    def last_embedded(self, table: EmbeddingTable) -> str | None:
        for item in reversed(self.recent_clicks):
            if item in table:
                return item
        return None


def cos_distance_avg(candidate: str, ctx: ClickContext, table: EmbeddingTable) -> FeatureValue:
    vec = table.get(candidate)
    context = [table.get(c) for c in ctx.recent_clicks if c in table]
    if vec is None or not context:
        return FeatureValue.absent()
    return FeatureValue.of(np.mean([1.0 - cosine_similarity(vec, w) for w in context]))


def cos_distance_last(candidate: str, ctx: ClickContext, table: EmbeddingTable) -> FeatureValue:
    vec = table.get(candidate)
    last = ctx.last_embedded(table)
    if vec is None or last is None:
        return FeatureValue.absent()
    return FeatureValue.of(1.0 - cosine_similarity(vec, table.get(last)))


def price_ratio_mean(candidate_price: float, ctx: ClickContext) -> FeatureValue:
    if not ctx.recent_clicks:
        return FeatureValue.absent()
    mean_price = sum(ctx.prices[c] for c in ctx.recent_clicks) / len(ctx.recent_clicks)
    return FeatureValue.of(candidate_price / mean_price)


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def title_jaccard_sim(candidate_tokens: frozenset[str] | set[str], ctx: ClickContext) -> FeatureValue:
    if not ctx.recent_clicks:
        return FeatureValue.absent()
    return FeatureValue.of(jaccard(candidate_tokens, ctx.title_tokens[ctx.recent_clicks[-1]]))


def personalization_matrix(
    candidates: Sequence[str],
    ctx: ClickContext,
    table: EmbeddingTable,
    catalog: Catalog,
    names: Sequence[str] = PERSONALIZATION_FEATURES,
) -> np.ndarray:
    """All requested features for a candidate list as an ``(n, len(names))`` array.

    Vectorized over candidates; agrees with the per-item functions above.
    """
    out = np.full((len(candidates), len(names)), MISSING)
    if not ctx.recent_clicks or not names:
        return out
    col = {name: j for j, name in enumerate(names)}

    if COS_DISTANCE_AVG in col or COS_DISTANCE_LAST in col:
        ctx_rows = [table.index[c] for c in ctx.recent_clicks if c in table]
        cand_pos = [k for k, c in enumerate(candidates) if c in table]
        if ctx_rows and cand_pos:
            unit = table.unit_vectors
            cand_rows = [table.index[candidates[k]] for k in cand_pos]
            dist = 1.0 - np.clip(unit[cand_rows] @ unit[ctx_rows].T, -1.0, 1.0)
            if COS_DISTANCE_AVG in col:
                out[cand_pos, col[COS_DISTANCE_AVG]] = dist.mean(axis=1)
            if COS_DISTANCE_LAST in col:
                out[cand_pos, col[COS_DISTANCE_LAST]] = dist[:, -1]

    if PRICE_RATIO_MEAN in col:
        mean_price = sum(ctx.prices[c] for c in ctx.recent_clicks) / len(ctx.recent_clicks)
        out[:, col[PRICE_RATIO_MEAN]] = [catalog[c].price / mean_price for c in candidates]

    if TITLE_JACCARD_SIM in col:
        last_tokens = ctx.title_tokens[ctx.recent_clicks[-1]]
        out[:, col[TITLE_JACCARD_SIM]] = [jaccard(catalog[c].title_tokens, last_tokens) for c in candidates]
    return out
