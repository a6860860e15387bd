"""Mean reciprocal rank of sold items, with bootstrap intervals over queries."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._ranking import group_reciprocal_ranks, item_tie_keys
from .instances import RankingDataset
from .lambdamart import TreeEnsemble

DEFAULT_RESAMPLES = 1000


@dataclass(frozen=True)
class BootstrapCI:
    median: float
    ci_low: float
    ci_high: float
    resamples: int
    seed: int


@dataclass
class EvalReport:
    model_name: str
    dataset_variant: str
    per_query_rr: dict[str, float]
    mrr: float
    bootstrap: BootstrapCI

    def to_json(self, per_query_rr_path: str | None = None) -> dict:
        return {
            "model_name": self.model_name,
            "dataset_variant": self.dataset_variant,
            "mrr": self.mrr,
            "bootstrap": asdict(self.bootstrap),
            "per_query_rr_path": per_query_rr_path,
        }


@dataclass
class Comparison:
    base_model: str
    treated_model: str
    base_mrr: float
    treated_mrr: float
    absolute_improvement: float
    relative_improvement: float
    difference: BootstrapCI
    significant: bool = field(default=False)


def reciprocal_rank(ranked_labels: Sequence[int]) -> float:
    for pos, label in enumerate(ranked_labels, start=1):
        if label:
            return 1.0 / pos
    return 0.0


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile of an ascending array."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return float(sorted_values[min(rank, n) - 1])


def bootstrap_means(values: Sequence[float], resamples: int, seed: int) -> np.ndarray:
    """Mean of each resample; resample ``b`` draws from its own generator seeded by ``(seed, b)``."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    out = np.empty(resamples)
    for b in range(resamples):
        idx = np.random.default_rng([seed, b]).integers(0, n, size=n)
        out[b] = values[idx].mean()
    return out


def bootstrap_mrr(per_query_rr: Sequence[float] | dict[str, float], resamples: int = DEFAULT_RESAMPLES,
                  seed: int = 0) -> BootstrapCI:
    values = list(per_query_rr.values()) if isinstance(per_query_rr, dict) else list(per_query_rr)
    if not values:
        raise ValueError("bootstrap needs at least one query")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    means = np.sort(bootstrap_means(values, resamples, seed))
    return BootstrapCI(
        median=nearest_rank(means, 50.0),
        ci_low=nearest_rank(means, 2.5),
        ci_high=nearest_rank(means, 97.5),
        resamples=resamples,
        seed=seed,
    )


def rank_groups(scores: np.ndarray, ds: RankingDataset) -> np.ndarray:
    (tie,) = item_tie_keys(ds.item_ids)
    return group_reciprocal_ranks(np.ascontiguousarray(scores, dtype=np.float64),
                                  ds.labels.astype(np.int64), ds.offsets, tie)


def evaluate_scores(scores: np.ndarray, ds: RankingDataset, model_name: str = "model",
                    resamples: int = DEFAULT_RESAMPLES, seed: int = 0) -> EvalReport:
    if ds.n_groups == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    rr = rank_groups(scores, ds)
    per_query = dict(zip(ds.query_ids, rr.tolist()))
    return EvalReport(
        model_name=model_name,
        dataset_variant=ds.variant,
        per_query_rr=per_query,
        mrr=float(rr.mean()),
        bootstrap=bootstrap_mrr(rr, resamples, seed),
    )


def evaluate(model: TreeEnsemble, ds: RankingDataset, model_name: str = "model",
             resamples: int = DEFAULT_RESAMPLES, seed: int = 0) -> EvalReport:
    return evaluate_scores(model.predict_dataset(ds), ds, model_name, resamples, seed)


def compare_models(base: EvalReport, treated: EvalReport, resamples: int | None = None,
                   seed: int | None = None) -> Comparison:
    """Relative MRR change plus a paired bootstrap over per-query RR differences."""
    if set(base.per_query_rr) != set(treated.per_query_rr):
        raise ValueError("reports cover different query sets")
    resamples = resamples or treated.bootstrap.resamples
    seed = treated.bootstrap.seed if seed is None else seed
    qids = sorted(base.per_query_rr)
    diff = np.array([treated.per_query_rr[q] - base.per_query_rr[q] for q in qids])
    ci = bootstrap_mrr(diff, resamples, seed)
    relative = (treated.mrr - base.mrr) / base.mrr if base.mrr > 0 else math.nan
    return Comparison(
        base_model=base.model_name,
        treated_model=treated.model_name,
        base_mrr=base.mrr,
        treated_mrr=treated.mrr,
        absolute_improvement=treated.mrr - base.mrr,
        relative_improvement=relative,
        difference=ci,
        significant=ci.ci_low > 0 or ci.ci_high < 0,
    )


def write_report(report: EvalReport, path: str | Path, per_query_rr_path: str | Path | None = None) -> None:
    if per_query_rr_path is not None:
        with open(per_query_rr_path, "w", encoding="utf-8") as fh:
            for q, rr in report.per_query_rr.items():
                fh.write(f"{q}\t{rr!r}\n")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(None if per_query_rr_path is None else Path(per_query_rr_path).name), fh, indent=2)
        fh.write("\n")
