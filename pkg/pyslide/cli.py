"""Run a pyslide experiment from a JSON config and print a one-line PASS/FAIL summary."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .api import ExperimentConfig, describe, experiment_names, run_experiment
from .errors import ConfigError, PySlideError
from .log import set_verbose
from .parallel import set_workers

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyslide", description=__doc__)
    parser.add_argument("--config", type=Path, help="Experiment config (JSON).")
    parser.add_argument("--out", type=Path, help="Output directory (overrides the config's 'out').")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Worker threads for quadrature tiles and probe samples; results do not depend on it.",
    )
    parser.add_argument("--list", action="store_true", help="List experiment names and exit.")
    parser.add_argument("--describe", metavar="NAME", help="Show what an experiment computes and its defaults.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress of long loops.")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    return cfg if args.out is None else cfg.with_out(args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    set_verbose(args.verbose)

    if args.list:
        print("\n".join(experiment_names()))
        return EXIT_PASS
    if args.describe:
        try:
            print(describe(args.describe))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_PASS
    if args.config is None:
        parser.print_usage(sys.stderr)
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG

    if args.threads < 1:
        print(f"error: --threads must be at least 1, got {args.threads}", file=sys.stderr)
        return EXIT_CONFIG
    set_workers(args.threads)

    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report = run_experiment(cfg)
    except ValueError as exc:
        # experiment parameters are only checked once the runner reads them
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PySlideError as exc:
        print(f"{cfg.experiment} FAIL error={exc}", file=sys.stderr)
        return EXIT_FAIL

    print(report.summary)
    lines: List[str] = list(report.details.get("summaries", [])) if report.details else []
    for line in lines:
        print(f"  {line}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
