"""Command-line entry point: ``glat <command> [options]``."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from glat.config import load_settings
from glat.exceptions import GlatError
from glat.pipeline import COMMANDS, run_pipeline

# Which setting ``--seed`` overrides for each command.
SEED_TARGETS = {
    "select": "shuffle_seed",
    "heatmap": "shuffle_seed",
    "infer": "shuffle_seed",
    "train": "seed",
    "crossval": "seed",
    "synth": "synth_seed",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glat",
        description="Patch selection and graph Laplacian attention for slide-level grading",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--input", type=Path, help="Embedding table or dataset directory")
    parser.add_argument("--output-dir", type=Path, help="Directory for artifacts")
    parser.add_argument("--checkpoint", type=Path, help="Checkpoint for infer / gla heatmaps")
    parser.add_argument("--trace", type=Path, help="Selection trace path (single table)")
    parser.add_argument("--seed", type=int, help="Seed for the command's random stream")
    parser.add_argument("--m", type=int, help="Patches kept per slide")
    parser.add_argument("--t", type=int, help="Refinement iterations")
    parser.add_argument("--score-mode", choices=("received", "row-mean"))
    parser.add_argument("--source", choices=("irm", "gla"), help="Heatmap score source")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return parser


def _configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "WARNING")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run the command and map errors to exit codes.

    Returns:
        0 on success, 2 on usage errors, else the error's ``exit_code``
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    overrides = {
        "m": args.m,
        "t": args.t,
        "score_mode": args.score_mode,
        "heatmap_source": args.source,
        SEED_TARGETS[args.command]: args.seed,
    }
    try:
        settings = load_settings(args.config, **overrides)
        return run_pipeline(
            settings,
            args.command,
            input_path=args.input,
            output_dir=args.output_dir,
            checkpoint=args.checkpoint,
            trace_path=args.trace,
        )
    except GlatError as e:
        print(f"\n[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"\n[ERROR] {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
