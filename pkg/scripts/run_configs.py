#!/usr/bin/env python3
"""Run every JSON config in a directory and print one summary line per experiment."""

import argparse
import logging
import sys
from pathlib import Path

from pyslide import ExperimentConfig, run_experiment, set_verbose, worker_scope
from pyslide.errors import PySlideError


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("configs", type=Path, nargs="?", default=Path("configs"), help="Directory of configs.")
    parser.add_argument("--out", type=Path, default=Path("results"), help="Root output directory.")
    parser.add_argument("--threads", type=int, default=1, help="Worker threads.")
    parser.add_argument("--skip", nargs="*", default=["accept-all", "empty-radii"], help="Config stems to skip.")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    set_verbose(args.verbose)

    failures = 0
    with worker_scope(args.threads):
        for path in sorted(args.configs.glob("*.json")):
            if path.stem in args.skip:
                continue
            try:
                cfg = ExperimentConfig.from_file(path).with_out(args.out / path.stem)
                report = run_experiment(cfg)
            except PySlideError as exc:
                print(f"{path.stem}: error {exc}")
                failures += 1
                continue
            print(f"{path.stem}: {report.summary}")
            failures += not report.passed
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
