#!/usr/bin/env python3
"""
🧮 SIAN - Structural Identifiability ANalyser
=============================================
Command-line front end:

    python main.py analyze corpus/goodwin.sian-model --prob 0.99
    python main.py bench corpus --classes fast,medium --jobs 4

The interactive page lives in streamlit_app.py.
"""

import argparse
import logging
import sys
from typing import List, Optional

from utils.bench_harness import CORPUS_CONFIG, run_analyze, run_bench
from utils.identifiability_core import ANALYSIS_CONFIG

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}")
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("probability must lie strictly between 0 and 1")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer: {text}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _classes(text: str) -> List[str]:
    classes = [c.strip() for c in text.split(",") if c.strip()]
    for c in classes:
        if c not in CORPUS_CONFIG["all_classes"]:
            raise argparse.ArgumentTypeError(
                f"unknown class {c!r}; choose from {', '.join(CORPUS_CONFIG['all_classes'])}"
            )
    return classes


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--prob", type=_probability, default=ANALYSIS_CONFIG["default_probability"],
                        help="probability of correctness (default: %(default)s)")
    common.add_argument("--seed", type=_seed, default=0, help="random seed (default: %(default)s)")
    common.add_argument("--max-order", type=_positive, default=None,
                        help="override the jet order ceiling (default: number of unknowns + 1)")
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    common.add_argument("--jobs", type=_positive, default=ANALYSIS_CONFIG["default_jobs"],
                        help="worker count (default: %(default)s)")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="sian",
        description="Structural identifiability of rational ODE models with a probability guarantee.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    analyze = subparsers.add_parser("analyze", parents=[common], help="label the unknowns of one model")
    analyze.add_argument("path", help="model file (.sian-model)")

    bench = subparsers.add_parser("bench", parents=[common], help="check the corpus against expected labels")
    bench.add_argument("corpus", nargs="?", default="corpus", help="corpus directory (default: %(default)s)")
    bench.add_argument("--classes", type=_classes, default=list(CORPUS_CONFIG["gating_classes"]),
                       help="comma-separated timing classes: fast,medium,stretch (default: fast,medium)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format=LOG_FORMAT)

    if args.command == "analyze":
        return run_analyze(
            args.path,
            probability=args.prob,
            seed=args.seed,
            max_order=args.max_order,
            as_json=args.json,
            jobs=args.jobs,
        )
    return run_bench(
        args.corpus,
        classes=args.classes,
        jobs=args.jobs,
        seed=args.seed,
        probability=args.prob,
        max_order=args.max_order,
        as_json=args.json,
    )


if __name__ == "__main__":
    sys.exit(main())
