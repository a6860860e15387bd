"""``srank`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from .catalog import DataError
from .pipeline import ExperimentConfig, Pipeline, PipelineError

COMMANDS = ("simulate", "phrases", "embed", "build-data", "train", "evaluate", "sweep-dims", "report", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srank", description="Personalized search ranking workbench.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--workers", type=int, help="worker threads for embedding training")
    parser.add_argument("--dim", type=int, help="override the embedding dimension")
    parser.add_argument("--variant", help="restrict train/evaluate to one model variant")
    parser.add_argument("--workdir", help="override the artifact directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args: argparse.Namespace) -> None:
    config = ExperimentConfig.load(args.config, seed=args.seed, workers=args.workers, dim=args.dim,
                                   workdir=args.workdir)
    pipe = Pipeline(config)
    cmd = args.command
    if args.variant is not None and cmd not in ("train", "evaluate"):
        raise PipelineError("--variant only applies to train and evaluate")
    if cmd == "simulate":
        pipe.simulate()
    elif cmd == "phrases":
        pipe.phrases()
    elif cmd == "embed":
        pipe.embed()
    elif cmd == "build-data":
        pipe.build_data()
    elif cmd == "train":
        pipe.train(args.variant)
    elif cmd == "evaluate":
        pipe.evaluate(args.variant)
    elif cmd == "sweep-dims":
        pipe.sweep_dims()
    elif cmd == "report":
        pipe.report()
        print((pipe.workdir / "report.txt").read_text(encoding="utf-8"), end="")
    elif cmd == "all":
        pipe.run_all()
        print((pipe.workdir / "report.txt").read_text(encoding="utf-8"), end="")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        run(args)
    except (PipelineError, DataError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"srank: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
