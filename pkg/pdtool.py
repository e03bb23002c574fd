#!/usr/bin/env python3
"""Command-line entry point.

Usage:
    # Run one or more experiments, writing traces to runs/
    python pdtool.py run experiments/extra.json --out runs --seed 3

    # Run the invariant gates of one module
    python pdtool.py check --filter consensus

    # Print the experiment config JSON schema
    python pdtool.py schema

Exit codes: 0 ok, 1 error, 2 finished with flagged warnings.
"""

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

from config.experiment import experiment_schema, load_experiment
from config.logging_config import get_logger, setup_logging
from config.settings import get_settings
from harness import ExitStatus, run_experiments
from services.checks import run_checks
from state.errors import PdtoolError


logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the run, check and schema subcommands."""
    parser = argparse.ArgumentParser(prog="pdtool", description="Primal-dual optimization toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run experiments from JSON configs")
    run.add_argument("configs", nargs="+", type=Path, help="Experiment config files")
    run.add_argument("--out", "-o", type=Path, default=None, help="Output directory (default: settings.output_dir)")
    run.add_argument("--seed", type=int, default=None, help="Override the seed of every config")

    check = commands.add_parser("check", help="Run the invariant gates")
    check.add_argument("--filter", "-f", default=None, help="Only run the gates of one module")

    commands.add_parser("schema", help="Print the experiment config JSON schema")
    return parser


def cmd_run(configs: Sequence[Path], out: Path | None, seed: int | None) -> int:
    """Validate every config before running any, then run them all."""
    experiments = [load_experiment(path, seed) for path in configs]
    out_dir = out if out is not None else Path(get_settings().output_dir)
    base_dir = configs[0].resolve().parent
    results = run_experiments(experiments, out_dir, base_dir)
    for result in results:
        for path in result.files:
            print(path)
        if result.report is not None:
            for gate in result.report.results:
                print(gate.line())
    return int(max((result.status for result in results), default=ExitStatus.OK, key=_severity))


def cmd_check(module: str | None) -> int:
    report = run_checks(module)
    for gate in report.results:
        print(gate.line())
    return int(ExitStatus.OK if report.passed else ExitStatus.ERROR)


def _severity(status: ExitStatus) -> int:
    # Errors outrank flagged runs, which outrank clean ones
    return {ExitStatus.OK: 0, ExitStatus.FLAGGED: 1, ExitStatus.ERROR: 2}[status]


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, dispatch and map errors to exit code 1."""
    args = build_parser().parse_args(argv)
    setup_logging(get_settings().log_level)
    try:
        if args.command == "run":
            return cmd_run(args.configs, args.out, args.seed)
        if args.command == "check":
            return cmd_check(args.filter)
        print(experiment_schema())
        return int(ExitStatus.OK)
    except PdtoolError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"pdtool: error: {e}", file=sys.stderr)
        return int(ExitStatus.ERROR)


if __name__ == "__main__":
    sys.exit(main())
