"""Command-line entry point: ``retina-pipeline <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, RetinaError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    """Raise ConfigError on usage errors so they share the exit-code mapping."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON experiment config")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key, e.g. --set trainer.phase=TWO (repeatable)",
    )
    common.add_argument("--jobs", "-j", type=int, default=1, help="parallel image workers (1 = reproducible)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="retina-pipeline", description="Fundus image grading pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("prepare", parents=[common], help="split the manifest and balance the training split")

    p = sub.add_parser("preprocess", parents=[common], help="build the preprocessed-image cache")
    p.add_argument("--input-dir", help="batch mode: preprocess every PNG in this directory")
    p.add_argument("--output-dir", help="batch mode: destination directory")
    p.add_argument("--materialize", action="store_true", help="also write augmented training images")

    p = sub.add_parser("train", parents=[common], help="train a classifier on the prepared splits")
    p.add_argument("--resume-from", help="checkpoint to initialise weights from (e.g. for phase TWO)")

    p = sub.add_parser("evaluate", parents=[common], help="evaluate on the test split")
    p.add_argument("--checkpoint", required=True, help="checkpoint path or predictions CSV")

    p = sub.add_parser("cascade", parents=[common], help="evaluate a cascade of binary models")
    p.add_argument("cascade_file", help="cascade description JSON")

    p = sub.add_parser("report", parents=[common], help="combine report.json files into one table")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--labels", nargs="+", help="column labels, one per report")
    p.add_argument("--reference", help="TASK/BACKBONE/OPTIMIZER row to diff against, e.g. BINARY/RESNET50/ADAM")
    return parser


def _print_table(table: dict) -> None:
    for name, value in table.items():
        print(f"{name:<20}{value:.4f}")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    cfg = load_config(args.config, args.overrides)

    if args.command == "prepare":
        dist = pipeline.cmd_prepare(cfg)
        print(json.dumps(dist, indent=2))
    elif args.command == "preprocess":
        if args.input_dir or args.output_dir:
            if not (args.input_dir and args.output_dir):
                raise ConfigError("--input-dir and --output-dir go together")
            written = pipeline.preprocess_directory(args.input_dir, args.output_dir, cfg, args.jobs)
        else:
            written = pipeline.cmd_preprocess(cfg, args.jobs, args.materialize)
        print(f"{len(written)} image(s) written")
    elif args.command == "train":
        summary = pipeline.cmd_train(cfg, args.resume_from, args.jobs)
        print(json.dumps(summary, indent=2))
    elif args.command == "evaluate":
        _print_table(pipeline.cmd_evaluate(cfg, args.checkpoint, args.jobs))
    elif args.command == "cascade":
        _print_table(pipeline.cmd_cascade(cfg, args.cascade_file, args.jobs))
    elif args.command == "report":
        out, lines = pipeline.cmd_report(cfg, args.reports, args.labels, args.reference)
        print(out.read_text(encoding="utf-8"), end="")
        for line in lines:
            print(line)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except RetinaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - anything unexpected is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
