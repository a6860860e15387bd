from __future__ import annotations

import numpy as np
import pytest

from srank.catalog import RANKING_WEEK, Catalog, ClickSession, Impression, Item
from srank.embed import EmbeddingTable

BASE = ("relevance",)


def make_table(vectors: dict[str, tuple[float, ...]]) -> EmbeddingTable:
    ids = list(vectors)
    return EmbeddingTable(ids, np.array([vectors[i] for i in ids], dtype=np.float64))


def make_impression(qid: str, context, candidates, sold, relevance=None) -> Impression:
    relevance = relevance or {}
    return Impression(
        query_id=qid,
        context_clicks=tuple(context),
        candidates=tuple(candidates),
        labels={c: int(c in sold) for c in candidates},
        base_features={c: {"relevance": float(relevance.get(c, 0.0))} for c in candidates},
    )


def ranking_session(sid: str, clicks, impressions) -> ClickSession:
    return ClickSession(sid, RANKING_WEEK, tuple(clicks), tuple(impressions))


@pytest.fixture
def tiny_catalog() -> Catalog:
    return Catalog([
        Item("a", "red summer dress", 10.0),
        Item("b", "blue summer dress", 20.0),
        Item("c", "green winter coat", 30.0),
        Item("d", "red winter coat", 40.0),
        Item("e", "", 50.0),
    ])
