"""Plain-text rendering of ``report.json``."""

from __future__ import annotations

import math
from typing import Any

from .features import CONTENT_FEATURES, EMBEDDING_FEATURES, PERSONALIZATION_FEATURES


def _pct(x: float) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{100 * x:+.1f}%"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return [fmt(header), "  ".join("-" * w for w in widths), *map(fmt, rows)]


def format_report(report: dict[str, Any]) -> str:
    lines = [f"config {report['config_hash'][:12]}  seed {report['seed']}", ""]

    lines.append("Feature coverage (fraction of instances with the feature present)")
    header = ["dataset", "role", "groups", *PERSONALIZATION_FEATURES, "embedding", "hand-crafted"]
    rows = []
    for dv, roles in sorted(report["coverage"].items()):
        for role, cov in roles.items():
            emb = sum(cov[f] for f in EMBEDDING_FEATURES) / len(EMBEDDING_FEATURES)
            hand = sum(cov[f] for f in CONTENT_FEATURES) / len(CONTENT_FEATURES)
            groups = report["dataset_sizes"][dv][role]["groups"]
            rows.append([dv, role, str(groups), *(f"{100 * cov[f]:.1f}%" for f in PERSONALIZATION_FEATURES),
                         f"{100 * emb:.1f}%", f"{100 * hand:.1f}%"])
    lines += _table(header, rows)

    for dv, models in report["models"].items():
        comps = report["comparisons"][dv]
        lines += ["", f"MRR on the {dv} test set (median and 95% bootstrap interval over queries)"]
        rows = []
        for mv, m in models.items():
            b = m["bootstrap"]
            c = comps.get(mv)
            rows.append([
                mv, f"{m['mrr']:.4f}", f"{b['median']:.4f}", f"[{b['ci_low']:.4f}, {b['ci_high']:.4f}]",
                "" if c is None else _pct(c["relative_improvement"]),
                "" if c is None else f"{c['absolute_improvement']:+.4f}",
                "" if c is None else ("yes" if c["significant"] else "no"),
            ])
        lines += _table(["model", "MRR", "median", "95% CI", "vs baseline", "abs", "significant"], rows)

    sweep = report.get("dimension_sweep")
    if sweep:
        dims = [str(d) for d in sweep["dimensions"]]
        lines += ["", f"MRR improvement over baseline by embedding dimension ({sweep['dataset_variant']} data)"]
        rows = []
        for mv, by_dim in sweep["relative_improvement"].items():
            sig = sweep["significant"][mv]
            rows.append([mv, *(_pct(by_dim[d]) + ("" if sig[d] else "*") for d in dims)])
        lines += _table(["model", *(f"{d} dim." for d in dims)], rows)
        lines.append("* paired bootstrap interval of the difference includes zero")
    return "\n".join(lines) + "\n"
