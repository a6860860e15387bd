"""Experiment chain: simulate -> phrases -> embed -> build-data -> train -> evaluate -> report.

Every step writes its artifacts under the work directory and records them in
``manifest.json`` together with the hashes of the inputs it consumed. All
module seeds derive from the one global seed, so a config file reproduces
the whole run byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .catalog import EMBEDDING_WEEK, RANKING_WEEK, load_catalog, load_sessions
from .corpus import build_vocabulary, extract_phrases, filter_phrases, read_phrases, read_vocabulary, write_phrases, write_vocabulary
from .embed import EmbedConfig, read_embeddings, train_skipgram, write_embeddings
from .evaluation import BootstrapCI, EvalReport, compare_models, evaluate, write_report
from .instances import (
    FEATURE_SELECTIONS,
    FULL,
    HIGH_COVERAGE,
    TEST,
    TRAIN,
    VALIDATION,
    build_instances,
    filter_high_coverage,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .lambdamart import BoostConfig, TreeEnsemble, train_lambdamart
from .report import format_report
from .synthetic import WorldSpec, generate_sessions, generate_world, write_world

logger = logging.getLogger(__name__)

ROLES = (TRAIN, VALIDATION, TEST)
DATASET_VARIANTS = (FULL, HIGH_COVERAGE)
MODEL_VARIANTS = tuple(FEATURE_SELECTIONS)


class PipelineError(RuntimeError):
    """A step cannot run: missing inputs, stale artifacts, or bad configuration."""


def derive_seed(global_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    workdir: Path
    seed: int = 0
    catalog: Path | None = None
    sessions: Path | None = None
    world: dict[str, Any] | None = None
    embed: dict[str, Any] = field(default_factory=dict)
    boost: dict[str, Any] = field(default_factory=dict)
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    min_phrase_count: int = 16
    min_items_train: int = 3
    min_items_test: int = 20
    dataset_variants: tuple[str, ...] = (HIGH_COVERAGE,)
    model_variants: tuple[str, ...] = MODEL_VARIANTS
    dimension_sweep: tuple[int, ...] = (32, 16, 8, 4)
    sweep_variants: tuple[str, ...] = ("baseline", "distance_avg", "distance_last", "all")
    sweep_dataset_variant: str = HIGH_COVERAGE
    bootstrap_resamples: int = 1000
    workers: int = 1

    def __post_init__(self) -> None:
        for v in self.dataset_variants:
            if v not in DATASET_VARIANTS:
                raise PipelineError(f"unknown dataset variant {v!r}")
        for v in (*self.model_variants, *self.sweep_variants):
            if v not in FEATURE_SELECTIONS:
                raise PipelineError(f"unknown model variant {v!r}")
        if "baseline" not in self.model_variants or "baseline" not in self.sweep_variants:
            raise PipelineError("model_variants and sweep_variants must include 'baseline'")
        if any(d < 1 for d in self.dimension_sweep):
            raise PipelineError("dimension_sweep values must be >= 1")
        for section in (self.world or {}, self.embed, self.boost):
            if "seed" in section:
                raise PipelineError("section seeds are derived from the global seed; set the top-level 'seed'")
        if self.world is None and (self.catalog is None or self.sessions is None):
            raise PipelineError("config needs either a [world] section or catalog and sessions paths")

    @classmethod
    def load(cls, path: str | Path, **overrides: Any) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise PipelineError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise PipelineError(f"cannot parse config {path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        base = path.parent
        data: dict[str, Any] = {}
        for key, value in raw.items():
            if key in ("workdir", "catalog", "sessions"):
                value = base / value
            elif isinstance(value, list):
                value = tuple(value)
            data[key] = value
        data.setdefault("workdir", base / "work")
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "dim":
                data["embed"] = {**data.get("embed", {}), "dimension": value}
            elif key == "workdir":
                data["workdir"] = Path(value)
            else:
                data[key] = value
        return cls(**data)

    def identity(self) -> dict[str, Any]:
        """Everything that can change an artifact (not the work dir or worker count)."""
        d = asdict(self)
        for key in ("workdir", "workers"):
            d.pop(key)
        for key in ("catalog", "sessions"):
            d[key] = None if d[key] is None else str(d[key])
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def seed_for(self, label: str) -> int:
        return derive_seed(self.seed, label)

    def embed_config(self, dimension: int | None = None) -> EmbedConfig:
        cfg = EmbedConfig(**self.embed, seed=self.seed_for("embed"), workers=self.workers)
        return cfg if dimension is None else replace(cfg, dimension=dimension)

    def boost_config(self) -> BoostConfig:
        return BoostConfig(**self.boost, seed=self.seed_for("boost"))

    def world_spec(self) -> WorldSpec:
        if self.world is None:
            raise PipelineError("config has no [world] section; nothing to simulate")
        return WorldSpec.from_dict({**self.world, "seed": self.seed_for("world")})


class Pipeline:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.workdir = Path(config.workdir)
        self.manifest_path = self.workdir / "manifest.json"
        self.manifest = self._load_manifest()

    # -- manifest -----------------------------------------------------------

    def _load_manifest(self) -> dict[str, Any]:
        fresh = {"config_hash": self.config.config_hash, "seed": self.config.seed, "artifacts": {}}
        if not self.manifest_path.exists():
            return fresh
        with open(self.manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("config_hash") != self.config.config_hash:
            raise PipelineError(
                f"stale manifest in {self.workdir}: artifacts were built with config hash "
                f"{manifest.get('config_hash', '?')[:12]}, current config is {self.config.config_hash[:12]}; "
                "use a fresh work directory"
            )
        return manifest

    def _save_manifest(self) -> None:
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.manifest["artifacts"] = dict(sorted(self.manifest["artifacts"].items()))
        with open(self.manifest_path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _rel(self, path: Path) -> str:
        try:
            return path.resolve().relative_to(self.workdir.resolve()).as_posix()
        except ValueError:
            return str(path)

    def _record(self, step: str, outputs: list[Path], inputs: list[Path]) -> None:
        in_hashes = {self._rel(p): file_sha256(p) for p in inputs}
        for out in outputs:
            self.manifest["artifacts"][self._rel(out)] = {
                "step": step,
                "sha256": file_sha256(out),
                "inputs": dict(sorted(in_hashes.items())),
            }
        self._save_manifest()

    def _require(self, path: Path, what: str, producer: str) -> Path:
        if not path.exists():
            raise PipelineError(f"missing {what} artifact {self._rel(path)} (run `srank {producer}` first)")
        recorded = self.manifest["artifacts"].get(self._rel(path))
        if recorded is not None and recorded["sha256"] != file_sha256(path):
            raise PipelineError(f"{self._rel(path)} changed since it was produced; rerun `srank {producer}`")
        return path

    # -- paths --------------------------------------------------------------

    @property
    def catalog_path(self) -> Path:
        return self.config.catalog or self.workdir / "catalog.jsonl"

    @property
    def sessions_path(self) -> Path:
        return self.config.sessions or self.workdir / "sessions.jsonl"

    def _inputs(self) -> tuple[Path, Path]:
        return (self._require(self.catalog_path, "catalog", "simulate"),
                self._require(self.sessions_path, "sessions", "simulate"))

    @staticmethod
    def dataset_path(base: Path, variant: str, role: str) -> Path:
        return base / "data" / f"dataset_{variant}_{role}.tsv"

    @staticmethod
    def model_path(base: Path, variant: str, model: str) -> Path:
        return base / "models" / variant / f"{model}.json"

    @staticmethod
    def report_path(base: Path, variant: str, model: str) -> Path:
        return base / "reports" / variant / f"{model}.json"

    # -- steps --------------------------------------------------------------

    def simulate(self) -> None:
        spec = self.config.world_spec()
        if self.config.catalog is not None or self.config.sessions is not None:
            raise PipelineError("config sets both [world] and input paths; drop one")
        catalog, truth = generate_world(spec)
        sessions = generate_sessions(catalog, truth, spec)
        self.workdir.mkdir(parents=True, exist_ok=True)
        write_world(catalog, sessions, truth, self.workdir)
        outs = [self.workdir / n for n in ("catalog.jsonl", "sessions.jsonl", "truth.json")]
        self._record("simulate", outs, [])
        logger.info("simulated %d items, %d sessions", len(catalog), len(sessions))

    def phrases(self) -> None:
        _, sessions_path = self._inputs()
        sessions = [s for s in load_sessions(sessions_path) if s.period == EMBEDDING_WEEK]
        corpus = extract_phrases(sessions)
        vocab = build_vocabulary(corpus, self.config.min_phrase_count)
        filtered = filter_phrases(corpus, vocab)
        out_phr, out_voc = self.workdir / "phrases.txt", self.workdir / "vocab.tsv"
        write_phrases(filtered, out_phr)
        write_vocabulary(vocab, out_voc)
        self._record("phrases", [out_phr, out_voc], [sessions_path])
        logger.info("%d phrases (%d tokens), vocabulary %d", filtered.phrase_count, filtered.token_count, len(vocab))

    def embed(self, dimension: int | None = None, out: Path | None = None) -> Path:
        phr = self._require(self.workdir / "phrases.txt", "phrase", "phrases")
        voc = self._require(self.workdir / "vocab.tsv", "vocabulary", "phrases")
        cfg = self.config.embed_config(dimension)
        table = train_skipgram(read_phrases(phr), read_vocabulary(voc, self.config.min_phrase_count), cfg)
        out = out or self.workdir / "embeddings.txt"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_embeddings(table, out)
        self._record("embed", [out], [phr, voc])
        logger.info("trained %d x %d embeddings -> %s", len(table), table.dimension, self._rel(out))
        return out

    def build_data(self, embeddings: Path | None = None, base: Path | None = None) -> dict[str, Any]:
        catalog_path, sessions_path = self._inputs()
        base = base or self.workdir
        emb = self._require(embeddings or self.workdir / "embeddings.txt", "embedding", "embed")
        catalog = load_catalog(catalog_path)
        sessions = [s for s in load_sessions(sessions_path) if s.period == RANKING_WEEK]
        table = read_embeddings(emb)
        full = build_instances(sessions, catalog, table, "all")
        parts = split_dataset(full, self.config.fractions, self.config.seed_for("split"))
        summary: dict[str, Any] = {FULL: {}, HIGH_COVERAGE: {}}
        outs = []
        (base / "data").mkdir(parents=True, exist_ok=True)
        for part in parts:
            high = filter_high_coverage(part, table, self.config.min_items_train, self.config.min_items_test)
            for ds in (part, high):
                path = self.dataset_path(base, ds.variant, ds.role)
                write_dataset(ds, path)
                outs.append(path)
                summary[ds.variant][ds.role] = {
                    "groups": ds.n_groups,
                    "instances": len(ds),
                    "coverage": ds.coverage(),
                }
        summary_path = base / "data" / "summary.json"
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._record("build-data", outs + [summary_path], [catalog_path, sessions_path, emb])
        return summary

    def train(self, variant: str | None = None, base: Path | None = None,
              dataset_variants: tuple[str, ...] | None = None, model_variants: tuple[str, ...] | None = None) -> None:
        base = base or self.workdir
        models = self._select(variant, model_variants or self.config.model_variants)
        for dv in dataset_variants or self.config.dataset_variants:
            tr_path = self._require(self.dataset_path(base, dv, TRAIN), "dataset", "build-data")
            va_path = self._require(self.dataset_path(base, dv, VALIDATION), "dataset", "build-data")
            train, val = read_dataset(tr_path, dv, TRAIN), read_dataset(va_path, dv, VALIDATION)
            for mv in models:
                model = train_lambdamart(train.for_model(mv), val.for_model(mv), self.config.boost_config())
                out = self.model_path(base, dv, mv)
                out.parent.mkdir(parents=True, exist_ok=True)
                model.save(out)
                self._record("train", [out], [tr_path, va_path])
                logger.info("trained %s/%s: %d trees, best iteration %d", dv, mv, len(model.trees), model.best_iteration)

    def evaluate(self, variant: str | None = None, base: Path | None = None,
                 dataset_variants: tuple[str, ...] | None = None, model_variants: tuple[str, ...] | None = None) -> None:
        base = base or self.workdir
        models = self._select(variant, model_variants or self.config.model_variants)
        for dv in dataset_variants or self.config.dataset_variants:
            te_path = self._require(self.dataset_path(base, dv, TEST), "dataset", "build-data")
            test = read_dataset(te_path, dv, TEST)
            for mv in models:
                m_path = self._require(self.model_path(base, dv, mv), "model", "train")
                model = TreeEnsemble.load(m_path)
                report = evaluate(model, test.for_model(mv), mv, self.config.bootstrap_resamples,
                                  self.config.seed_for("bootstrap"))
                out = self.report_path(base, dv, mv)
                rr_path = out.with_name(f"{mv}_rr.tsv")
                out.parent.mkdir(parents=True, exist_ok=True)
                write_report(report, out, rr_path)
                self._record("evaluate", [out, rr_path], [te_path, m_path])
                logger.info("%s/%s: MRR %.4f", dv, mv, report.mrr)

    def sweep_dims(self) -> None:
        dv = self.config.sweep_dataset_variant
        for dim in self.config.dimension_sweep:
            base = self.workdir / "sweep" / f"d{dim}"
            emb = self.embed(dim, base / "embeddings.txt")
            self.build_data(emb, base)
            self.train(base=base, dataset_variants=(dv,), model_variants=self.config.sweep_variants)
            self.evaluate(base=base, dataset_variants=(dv,), model_variants=self.config.sweep_variants)

    def report(self) -> dict[str, Any]:
        cfg = self.config
        summary_path = self._require(self.workdir / "data" / "summary.json", "dataset summary", "build-data")
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        inputs = [summary_path]
        out: dict[str, Any] = {
            "config_hash": cfg.config_hash,
            "seed": cfg.seed,
            "coverage": {dv: {role: summary[dv][role]["coverage"] for role in ROLES} for dv in summary},
            "dataset_sizes": {dv: {role: {k: summary[dv][role][k] for k in ("groups", "instances")}
                                   for role in ROLES} for dv in summary},
            "models": {},
            "comparisons": {},
        }
        for dv in cfg.dataset_variants:
            reports = self._load_reports(self.workdir, dv, cfg.model_variants, inputs)
            out["models"][dv] = {mv: r.to_json(f"{mv}_rr.tsv") for mv, r in reports.items()}
            out["comparisons"][dv] = self._compare(reports)
        if cfg.dimension_sweep:
            sweep: dict[str, Any] = {
                "dataset_variant": cfg.sweep_dataset_variant,
                "dimensions": list(cfg.dimension_sweep),
                "relative_improvement": {},
                "significant": {},
                "mrr": {},
            }
            for dim in cfg.dimension_sweep:
                base = self.workdir / "sweep" / f"d{dim}"
                reports = self._load_reports(base, cfg.sweep_dataset_variant, cfg.sweep_variants, inputs)
                comps = self._compare(reports)
                for mv, rep in reports.items():
                    sweep["mrr"].setdefault(mv, {})[str(dim)] = rep.mrr
                for mv, c in comps.items():
                    sweep["relative_improvement"].setdefault(mv, {})[str(dim)] = c["relative_improvement"]
                    sweep["significant"].setdefault(mv, {})[str(dim)] = c["significant"]
            out["dimension_sweep"] = sweep
        json_path, txt_path = self.workdir / "report.json", self.workdir / "report.txt"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
            fh.write("\n")
        txt_path.write_text(format_report(out), encoding="utf-8")
        self._record("report", [json_path, txt_path], inputs)
        return out

    def run_all(self) -> dict[str, Any]:
        if self.config.world is not None:
            self.simulate()
        self.phrases()
        self.embed()
        self.build_data()
        self.train()
        self.evaluate()
        if self.config.dimension_sweep:
            self.sweep_dims()
        return self.report()

    # -- helpers ------------------------------------------------------------

    @staticmethod
    def _select(variant: str | None, variants: tuple[str, ...]) -> tuple[str, ...]:
        if variant is None:
            return variants
        if variant not in FEATURE_SELECTIONS:
            raise PipelineError(f"unknown model variant {variant!r}; choose from {list(FEATURE_SELECTIONS)}")
        return (variant,)

    def _load_reports(self, base: Path, dv: str, variants: tuple[str, ...], inputs: list[Path]) -> dict[str, EvalReport]:
        reports = {}
        for mv in variants:
            path = self._require(self.report_path(base, dv, mv), "evaluation report", "evaluate")
            rr_path = self._require(path.with_name(f"{mv}_rr.tsv"), "per-query RR", "evaluate")
            inputs += [path, rr_path]
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
            with open(rr_path, encoding="utf-8") as fh:
                rr = {q: float(v) for q, v in (line.rstrip("\n").split("\t") for line in fh if line.strip())}
            reports[mv] = EvalReport(obj["model_name"], obj["dataset_variant"], rr, obj["mrr"],
                                     BootstrapCI(**obj["bootstrap"]))
        return reports

    def _compare(self, reports: dict[str, EvalReport]) -> dict[str, Any]:
        base = reports["baseline"]
        comps = {}
        for mv, rep in reports.items():
            if mv == "baseline":
                continue
            c = compare_models(base, rep, self.config.bootstrap_resamples, self.config.seed_for("paired-bootstrap"))
            comps[mv] = {
                "base_mrr": c.base_mrr,
                "treated_mrr": c.treated_mrr,
                "absolute_improvement": c.absolute_improvement,
                "relative_improvement": c.relative_improvement,
                "difference": asdict(c.difference),
                "significant": c.significant,
            }
        return comps
