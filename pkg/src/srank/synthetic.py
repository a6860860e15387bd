"""Seeded synthetic marketplace of clustered items and the sessions that click and buy them.

Items belong to clusters that share a title vocabulary and a price level.
Every session has a preferred cluster; clicks mostly stay inside it. Ranking
sessions also show result pages, and the sold item is the candidate with the
highest noisy utility, which rewards query relevance, matching the preferred
cluster, and being priced like the items clicked so far.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .catalog import (
    EMBEDDING_WEEK,
    RANKING_WEEK,
    Catalog,
    ClickSession,
    Impression,
    Item,
    write_catalog,
    write_sessions,
)

BASE_FEATURES = ("relevance", "log_price", "popularity")


@dataclass(frozen=True)
class WorldSpec:
    n_items: int = 2000
    n_clusters: int = 5
    cluster_coherence: float = 0.9
    n_sessions_embedding: int = 50_000
    n_sessions_ranking: int = 5_000
    clicks_per_session: tuple[int, int] = (2, 8)
    impressions_per_session: tuple[int, int] = (1, 2)
    candidates_per_impression: tuple[int, int] = (25, 40)
    same_cluster_share: float = 0.3
    empty_context_prob: float = 0.15
    revisit_prob: float = 0.2
    # price model: per-cluster log-mean drawn from this range, shared log-sd
    price_log_mean_range: tuple[float, float] = (2.0, 6.0)
    price_log_sd: float = 0.5
    # title model: cluster pools are disjoint; noise tokens are shared
    title_pool_size: int = 12
    title_tokens: tuple[int, int] = (3, 6)
    noise_pool_size: int = 40
    noise_tokens: tuple[int, int] = (0, 2)
    popularity_sd: float = 0.5
    base_feature_noise: float = 1.0
    withheld_fraction: float = 0.0
    sale_relevance_weight: float = 1.0
    sale_cluster_weight: float = 1.5
    sale_price_weight: float = 1.5
    sale_popularity_weight: float = 0.3
    sale_revisit_weight: float = 1.0
    sale_noise: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.n_clusters <= self.n_items:
            raise ValueError("need 1 <= n_clusters <= n_items")
        if not 0 < self.cluster_coherence <= 1:
            raise ValueError("cluster_coherence must lie in (0, 1]")
        if not 0 <= self.withheld_fraction < 1:
            raise ValueError("withheld_fraction must lie in [0, 1)")
        for name in ("clicks_per_session", "impressions_per_session", "candidates_per_impression",
                     "title_tokens", "noise_tokens"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be a non-empty range")
        if self.clicks_per_session[0] < 1 or self.candidates_per_impression[0] < 1:
            raise ValueError("sessions need at least one click and impressions at least one candidate")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorldSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown world settings: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass
class GroundTruth:
    cluster_of: dict[str, int]
    user_preference: dict[str, int] = field(default_factory=dict)
    withheld: list[str] = field(default_factory=list)
    cluster_price_log_mean: list[float] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def _rng(spec: WorldSpec, *labels: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, *labels])


def _item_id(i: int) -> str:
    return f"item{i:06d}"


def generate_world(spec: WorldSpec) -> tuple[Catalog, GroundTruth]:
    rng = _rng(spec, 0)
    log_means = rng.uniform(*spec.price_log_mean_range, size=spec.n_clusters)
    items, cluster_of = [], {}
    for i in range(spec.n_items):
        c = i % spec.n_clusters
        n_words = rng.integers(spec.title_tokens[0], spec.title_tokens[1] + 1)
        n_noise = rng.integers(spec.noise_tokens[0], spec.noise_tokens[1] + 1)
        words = [f"c{c}w{k}" for k in rng.choice(spec.title_pool_size, size=min(n_words, spec.title_pool_size),
                                                 replace=False)]
        words += [f"n{k}" for k in rng.integers(0, spec.noise_pool_size, size=n_noise)]
        price = max(0.01, round(float(np.exp(rng.normal(log_means[c], spec.price_log_sd))), 2))
        item_id = _item_id(i)
        items.append(Item(item_id, " ".join(words), price))
        cluster_of[item_id] = c
    n_withheld = int(round(spec.withheld_fraction * spec.n_items))
    withheld = sorted(_item_id(i) for i in rng.choice(spec.n_items, size=n_withheld, replace=False))
    truth = GroundTruth(cluster_of, {}, withheld, [float(m) for m in log_means])
    return Catalog(items), truth


class _Sampler:
    """Popularity-weighted item draws, per cluster and overall."""

    def __init__(self, indices: np.ndarray, clusters: np.ndarray, weights: np.ndarray, n_clusters: int):
        self.indices = indices
        self.cum_all = np.cumsum(weights[indices])
        self.by_cluster = []
        for c in range(n_clusters):
            members = indices[clusters[indices] == c]
            if len(members) == 0:
                members = indices
            self.by_cluster.append((members, np.cumsum(weights[members])))

    def draw(self, rng: np.random.Generator, cluster: int, n: int, coherence: float) -> np.ndarray:
        stay = rng.random(n) < coherence
        u = rng.random(n)
        out = np.empty(n, dtype=np.int64)
        members, cum = self.by_cluster[cluster]
        k = np.searchsorted(cum, u[stay] * cum[-1], side="right")
        out[stay] = members[np.minimum(k, len(members) - 1)]
        k = np.searchsorted(self.cum_all, u[~stay] * self.cum_all[-1], side="right")
        out[~stay] = self.indices[np.minimum(k, len(self.indices) - 1)]
        return out


def generate_sessions(catalog: Catalog, truth: GroundTruth, spec: WorldSpec) -> list[ClickSession]:
    """Embedding-week sessions first, then ranking-week sessions with impressions.

    Fills ``truth.user_preference`` as a side effect.
    """
    ids = list(catalog)
    n = len(ids)
    clusters = np.array([truth.cluster_of[i] for i in ids])
    prices = np.array([catalog[i].price for i in ids])
    log_prices = np.log(prices)
    pop_rng = _rng(spec, 1)
    log_pop = pop_rng.normal(0.0, spec.popularity_sd, size=n)
    weights = np.exp(log_pop)
    members = [np.flatnonzero(clusters == c) for c in range(spec.n_clusters)]
    withheld = set(truth.withheld)
    eligible = np.array([k for k, i in enumerate(ids) if i not in withheld], dtype=np.int64)
    embed_sampler = _Sampler(eligible, clusters, weights, spec.n_clusters)
    rank_sampler = _Sampler(np.arange(n), clusters, weights, spec.n_clusters)

    sessions: list[ClickSession] = []
    for s in range(spec.n_sessions_embedding):
        rng = _rng(spec, 2, s)
        sid = f"e{s:07d}"
        pref = int(rng.integers(spec.n_clusters))
        n_clicks = int(rng.integers(spec.clicks_per_session[0], spec.clicks_per_session[1] + 1))
        clicks = embed_sampler.draw(rng, pref, n_clicks, spec.cluster_coherence)
        truth.user_preference[sid] = pref
        sessions.append(ClickSession(sid, EMBEDDING_WEEK, tuple(ids[k] for k in clicks)))

    for s in range(spec.n_sessions_ranking):
        rng = _rng(spec, 3, s)
        sid = f"r{s:07d}"
        pref = int(rng.integers(spec.n_clusters))
        n_clicks = int(rng.integers(max(spec.clicks_per_session[0], 1), spec.clicks_per_session[1] + 1))
        clicks = rank_sampler.draw(rng, pref, n_clicks, spec.cluster_coherence)
        truth.user_preference[sid] = pref
        n_imp = int(rng.integers(spec.impressions_per_session[0], spec.impressions_per_session[1] + 1))
        positions = sorted(
            0 if rng.random() < spec.empty_context_prob else int(rng.integers(1, n_clicks + 1))
            for _ in range(n_imp)
        )
        impressions = []
        for q, pos in enumerate(positions):
            context = clicks[:pos]
            candidates = _draw_candidates(rng, spec, pref, members, n, context)
            sold, rel = _pick_sale(rng, spec, candidates, pref, clusters, log_prices, log_pop, context)
            noisy_rel = rel + rng.normal(0.0, spec.base_feature_noise, size=len(candidates))
            noisy_pop = log_pop[candidates] + rng.normal(0.0, 0.1, size=len(candidates))
            cand_ids = tuple(ids[k] for k in candidates)
            base = {
                cid: {"relevance": float(noisy_rel[j]), "log_price": float(log_prices[candidates[j]]),
                      "popularity": float(noisy_pop[j])}
                for j, cid in enumerate(cand_ids)
            }
            impressions.append(Impression(
                query_id=f"{sid}q{q}",
                context_clicks=tuple(ids[k] for k in context),
                candidates=cand_ids,
                labels={cid: int(j == sold) for j, cid in enumerate(cand_ids)},
                base_features=base,
            ))
        sessions.append(ClickSession(sid, RANKING_WEEK, tuple(ids[k] for k in clicks), tuple(impressions)))
    return sessions


def _draw_candidates(rng, spec, pref, members, n_items, context) -> np.ndarray:
    m = int(rng.integers(spec.candidates_per_impression[0], spec.candidates_per_impression[1] + 1))
    m = min(m, n_items)
    n_same = min(int(round(spec.same_cluster_share * m)), len(members[pref]))
    chosen = list(rng.choice(members[pref], size=n_same, replace=False))
    if len(context) and rng.random() < spec.revisit_prob and context[-1] not in chosen:
        chosen.append(int(context[-1]))
    taken = set(chosen)
    while len(chosen) < m:
        k = int(rng.integers(n_items))
        if k not in taken:
            taken.add(k)
            chosen.append(k)
    chosen = np.array(chosen[:m], dtype=np.int64)
    return chosen[rng.permutation(len(chosen))]


def _pick_sale(rng, spec, candidates, pref, clusters, log_prices, log_pop, context) -> tuple[int, np.ndarray]:
    """Index of the sold candidate and the latent relevance of every candidate."""
    rel = rng.normal(0.0, 1.0, size=len(candidates))
    utility = spec.sale_relevance_weight * rel
    utility += spec.sale_cluster_weight * (clusters[candidates] == pref)
    utility += spec.sale_popularity_weight * log_pop[candidates]
    if len(context):
        ctx_log_mean = math.log(np.exp(log_prices[context]).mean())
        utility -= spec.sale_price_weight * np.abs(log_prices[candidates] - ctx_log_mean)
        utility += spec.sale_revisit_weight * np.isin(candidates, context)
    utility += rng.gumbel(0.0, spec.sale_noise, size=len(candidates))
    return int(np.argmax(utility)), rel


def write_world(catalog: Catalog, sessions: list[ClickSession], truth: GroundTruth, workdir: str | Path) -> None:
    workdir = Path(workdir)
    write_catalog(catalog, workdir / "catalog.jsonl")
    write_sessions(sessions, workdir / "sessions.jsonl")
    truth.save(workdir / "truth.json")
