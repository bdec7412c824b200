# src/main.py
"""
Command-line entry point.

    python -m src.main run      --config configs/exterior_ball.toml [--out DIR] [--seed-override N]
    python -m src.main validate --config configs/trajectory.toml
    python -m src.main sweep    --config configs/quadratic_sweep.toml [--workers N]
    python -m src.main fetch    --dataset mnist

Exit status: 0 on success, 1 when a run aborts or a validator fails,
2 when the configuration cannot be loaded.
"""

from pathlib import Path
from typing import List, Optional
import argparse
import logging
import sys

from pydantic import ValidationError
import requests

from src.core.exceptions import CostaError, InvalidConfigError
from src.evaluation import experiment, validators
from src.models.schemas import ExperimentConfig
from src.problems import datasets
from src.utils import io_utils

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        force=True,
    )


def _load(args: argparse.Namespace) -> Optional[ExperimentConfig]:
    """Config with CLI overrides applied, or None after logging why it failed."""
    try:
        config = experiment.load_config(args.config)
        if args.seed_override is not None:
            config = experiment.with_run_overrides(config, seed=args.seed_override)
            config = config.model_copy(update={
                "sweep": config.sweep.model_copy(update={"seeds": [args.seed_override]}),
            })
        return config
    except FileNotFoundError as e:
        logger.error(f"Config file not found: {e.filename}")
    except tomllib.TOMLDecodeError as e:
        logger.error(f"Config is not valid TOML: {e}")
    except ValidationError as e:
        logger.error(f"Invalid config {args.config}:\n{e}")
    except InvalidConfigError as e:
        logger.error(f"Invalid config {args.config}: {e}")
    return None


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return EXIT_CONFIG

    out_dir = experiment.resolve_output_dir(config, args.out)
    logger.info("=" * 80)
    logger.info(f"RUN {config.experiment.name} ({config.experiment.problem}, {config.run.method})")
    logger.info("=" * 80)
    try:
        summary = experiment.execute_run(config, out_dir)
    except CostaError as e:
        logger.error(f"Run could not start: {e}")
        io_utils.ensure_dir(out_dir)
        io_utils.write_failure_marker(out_dir, str(e))
        return EXIT_FAILED

    if summary.aborted:
        logger.error(f"Run aborted: {summary.abort_reason}")
        return EXIT_FAILED
    best = summary.best_kkt
    if best is not None:
        logger.info(
            f"Best KKT point t={summary.best_kkt_index}: stationarity={best.stationarity:.3e}, "
            f"lambda^T g={best.complementarity_g:.3e}"
        )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return EXIT_CONFIG

    logger.info("=" * 80)
    logger.info(f"VALIDATE {config.experiment.name} ({config.experiment.problem})")
    logger.info("=" * 80)
    try:
        reports = validators.run_validation(config)
    except CostaError as e:
        logger.error(f"Validation could not run: {e}")
        return EXIT_FAILED

    if args.out is not None:
        out_dir = io_utils.ensure_dir(args.out)
        io_utils.write_json([r.model_dump(mode="json") for r in reports], out_dir / io_utils.VALIDATION_FILE)
        io_utils.write_schema(out_dir, [io_utils.VALIDATION_FILE])

    failed = [r for r in reports if not r.passed]
    checks = sum(len(r.checks) for r in reports)
    for report in failed:
        names = ", ".join(f"{c.name} ({c.message})" if c.message else c.name for c in report.failures)
        logger.error(f"{report.subject}: {names}")
    logger.info(f"{checks} check(s) in {len(reports)} report(s), {len(failed)} report(s) failed")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return EXIT_CONFIG

    out_dir = experiment.resolve_output_dir(config, args.out)
    workers = args.workers or config.sweep.workers
    logger.info("=" * 80)
    logger.info(f"SWEEP {config.experiment.name}: {len(experiment.sweep_cells(config))} cells")
    logger.info("=" * 80)
    try:
        frame = experiment.run_sweep(config, out_dir, workers)
    except CostaError as e:
        logger.error(f"Sweep failed: {e}")
        return EXIT_FAILED

    aborted = int(frame["aborted"].sum())
    if aborted:
        logger.error(f"{aborted} of {len(frame)} cells aborted")
        return EXIT_FAILED
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    try:
        path = datasets.fetch_libsvm(args.dataset, args.out)
    except InvalidConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except requests.RequestException as e:
        logger.error(f"Download failed: {e}")
        return EXIT_FAILED
    logger.info(f"Dataset ready at {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="costa",
        description="Constrained stochastic successive convex approximation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler, help_text in (
        ("run", cmd_run, "Run the configured method once"),
        ("validate", cmd_validate, "Check surrogates, parameters and Slater margins"),
        ("sweep", cmd_sweep, "Run every (method, T, seed) cell and aggregate"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="TOML experiment file")
        p.add_argument("--out", type=Path, default=None, help="Output directory")
        p.add_argument("--workers", type=int, default=None, help="Parallel sweep workers")
        p.add_argument("--seed-override", type=int, default=None, help="Replace run and sweep seeds")
        p.add_argument("--verbose", action="store_true", help="Debug logging")
        p.set_defaults(handler=handler)

    fetch = sub.add_parser("fetch", help="Download a LIBSVM dataset")
    fetch.add_argument("--dataset", required=True, choices=sorted(datasets.LIBSVM_REGISTRY))
    fetch.add_argument("--out", type=Path, default=None, help="Data directory")
    fetch.add_argument("--verbose", action="store_true", help="Debug logging")
    fetch.set_defaults(handler=cmd_fetch)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
