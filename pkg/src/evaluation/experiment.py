# src/evaluation/experiment.py
"""
Experiment orchestration: config loading, problem assembly, single runs and
multi-seed sweeps with their result files.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import logging
import math
import sys

import numpy as np
import pandas as pd

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from src.config import OUTPUT_DIR
from src.core.exceptions import InvalidConfigError, MetadataRequiredError, RunAbortedError
from src.core.problem import StochasticProblem, feasibility_violation
from src.evaluation import metrics, monitors
from src.models.schemas import (
    CheckStatus,
    Environment,
    ExperimentConfig,
    ExteriorBallParams,
    QuadraticParams,
    RunConfig,
    RunSummary,
    SmoothnessMeta,
    SparseLogisticParams,
    ValidationReport,
)
from src.optim import costa, schedule
from src.problems import datasets, sparse_logistic, synthetic, trajectory
from src.utils import io_utils

logger = logging.getLogger(__name__)


@dataclass
class ProblemBundle:
    """A built problem plus what the reports need besides the oracles."""

    problem: StochasticProblem
    kind: str
    dataset: Optional[sparse_logistic.Dataset] = None
    environment: Optional[Environment] = None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Parse and validate a TOML experiment file.

    Raises:
        FileNotFoundError: If the file does not exist
        tomllib.TOMLDecodeError: On malformed TOML
        pydantic.ValidationError: On invalid fields
    """
    path = Path(path)
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    config = ExperimentConfig.model_validate(raw)
    # problem parameters are validated eagerly so bad paths fail before any run
    config.problem_params()
    logger.info(f"Loaded config '{config.experiment.name}' ({config.experiment.problem}) from {path}")
    return config


def build_problem(config: ExperimentConfig) -> ProblemBundle:
    """
    Instantiate the configured problem.

    Raises:
        InvalidConfigError: On an unusable problem section
    """
    kind = config.experiment.problem
    params = config.problem_params()

    if kind == "synthetic-quadratic":
        assert isinstance(params, QuadraticParams)
        problem = synthetic.build_quadratic_problem(
            dimension=params.dimension, sigma=params.sigma, center=params.center, radius=params.radius,
        )
        return ProblemBundle(problem=problem, kind=kind)

    if kind == "exterior-ball":
        assert isinstance(params, ExteriorBallParams)
        return ProblemBundle(
            problem=synthetic.build_exterior_ball_problem(target=params.target, radius=params.radius),
            kind=kind,
        )

    if kind == "sparse-logistic":
        assert isinstance(params, SparseLogisticParams)
        if params.dataset_path is not None:
            dataset = datasets.load_dataset(
                params.dataset_path,
                params.test_path,
                label_rule=params.label_rule,
                n_features=params.n_features,
                test_fraction=params.test_fraction,
                split_seed=params.split_seed,
            )
        else:
            synth = params.synthetic
            dataset = sparse_logistic.make_synthetic_dataset(
                samples=synth.samples,
                features=synth.features,
                informative=synth.informative,
                seed=synth.seed,
                test_fraction=params.test_fraction,
            )
        problem = sparse_logistic.build_sparse_logistic(
            dataset, params.mcp, batch_size=params.batch_size, smoothed=params.smoothed,
        )
        return ProblemBundle(problem=problem, kind=kind, dataset=dataset)

    if kind == "trajectory":
        assert isinstance(params, Environment)
        return ProblemBundle(problem=trajectory.build_trajectory_problem(params), kind=kind, environment=params)

    raise InvalidConfigError(f"unknown problem '{kind}'")


def effective_meta(bundle: ProblemBundle, config: ExperimentConfig) -> SmoothnessMeta:
    """Problem metadata with the config's [meta] entries taking precedence."""
    meta = bundle.problem.meta.merged(config.meta)
    if meta.mu is None:
        meta = meta.model_copy(update={"mu": config.run.mu})
    return meta


def resolve_output_dir(config: ExperimentConfig, override: Optional[Union[str, Path]] = None) -> Path:
    if override is not None:
        return Path(override)
    if config.experiment.output_dir is not None:
        return Path(config.experiment.output_dir)
    return OUTPUT_DIR / config.experiment.name


def with_run_overrides(config: ExperimentConfig, **updates: Any) -> ExperimentConfig:
    """Copy of the config with RunConfig fields replaced (re-validated)."""
    known = {k: v for k, v in updates.items() if v is not None}
    if not known:
        return config
    run = RunConfig.model_validate({**config.run.model_dump(), **known})
    return config.model_copy(update={"run": run})


# ---------------------------------------------------------------------------
# Single run
# ---------------------------------------------------------------------------

def problem_metrics(bundle: ProblemBundle, x: np.ndarray, run: RunConfig) -> Dict[str, float]:
    """Accuracy for classification, paired energies for planning."""
    if bundle.dataset is not None:
        return {
            "train_accuracy": sparse_logistic.accuracy(x, bundle.dataset, "train"),
            "test_accuracy": sparse_logistic.accuracy(x, bundle.dataset, "test"),
            "nonzeros": float(np.count_nonzero(np.abs(x) > 1e-6)),
        }
    if bundle.environment is not None:
        env = bundle.environment
        samples = run.mc_samples
        # common random numbers: both energies see the same ensemble members
        optimized = trajectory.trajectory_energy(x, env, samples, np.random.default_rng([run.seed, 7]))
        baseline = trajectory.straight_line_energy(env, samples, np.random.default_rng([run.seed, 7]))
        W = np.asarray(x, dtype=float).reshape(env.n_agents, env.horizon, 2)
        goal_error = float(np.linalg.norm(W[:, -1, :] - np.asarray(env.goals, dtype=float), axis=1).max())
        return {
            "optimized_energy": optimized,
            "straight_line_energy": baseline,
            "energy_ratio": optimized / baseline if baseline > 0 else math.nan,
            "goal_error": goal_error,
        }
    return {}


def summarize(
    config: ExperimentConfig,
    bundle: ProblemBundle,
    trace: costa.RunTrace,
    meta: SmoothnessMeta,
    parameter_checks: ValidationReport,
) -> RunSummary:
    run = trace.config
    last = trace.records[-1] if trace.records else None

    certificate, note = None, None
    try:
        certificate = costa.rate_bound(meta, run, run.iterations)
    except MetadataRequiredError as exc:
        note = str(exc)

    monitor_reports = monitors.run_monitors(bundle.problem, trace, meta.L, config.validation.omega)
    final_point = trace.final_point
    return RunSummary(
        experiment=config.experiment.name,
        problem=config.experiment.problem,
        method=trace.method,
        seed=run.seed,
        iterations=run.iterations,
        completed_iterations=len(trace),
        aborted=trace.aborted,
        abort_reason=trace.abort_reason,
        average_progress=trace.average_progress,
        best_kkt_index=trace.best_kkt_index,
        best_kkt=trace.best_kkt_report(),
        rate_certificate=certificate,
        rate_certificate_note=note,
        final_feasibility=feasibility_violation(bundle.problem, final_point),
        max_feasibility=max((r.feasibility for r in trace.records), default=None),
        final_objective=last.objective_est if last else None,
        initial_objective=trace.initial_objective,
        empirical_B_U=trace.empirical_B_U,
        unconverged_solves=trace.unconverged_solves,
        oracle_calls_gradient=last.oracle_calls_gradient if last else 0,
        oracle_calls_sample=last.oracle_calls_sample if last else 0,
        parameter_checks=parameter_checks,
        monitors=monitor_reports,
        metrics=problem_metrics(bundle, final_point, run),
        final_point=[float(v) for v in final_point],
    )


def write_run_outputs(
    config: ExperimentConfig,
    bundle: ProblemBundle,
    trace: costa.RunTrace,
    summary: RunSummary,
    out_dir: Path,
) -> List[str]:
    written = []
    if config.output.trace:
        io_utils.write_trace(trace, out_dir)
        written.append(io_utils.TRACE_FILE)
    if config.output.summary:
        io_utils.write_json(summary, out_dir / io_utils.SUMMARY_FILE)
        written.append(io_utils.SUMMARY_FILE)
    if config.output.plot_data:
        io_utils.write_plot_objective(trace, out_dir)
        written.append(io_utils.PLOT_OBJECTIVE_FILE)
        if bundle.environment is not None:
            io_utils.write_plot_trajectory(trajectory.waypoint_table(trace.final_point, bundle.environment), out_dir)
            written.append(io_utils.PLOT_TRAJECTORY_FILE)
    io_utils.write_schema(out_dir, written)
    return written


def execute_run(
    config: ExperimentConfig,
    out_dir: Union[str, Path],
    bundle: Optional[ProblemBundle] = None,
) -> RunSummary:
    """
    Run the configured method once and write its result files.

    An aborted run still writes the partial trace and summary, plus the
    FAILED marker; the summary then has `aborted` set.

    Raises:
        InvalidConfigError: If the run cannot start (infeasible x_1, ...)
    """
    out_dir = io_utils.ensure_dir(out_dir)
    bundle = bundle or build_problem(config)
    meta = effective_meta(bundle, config)
    run = config.run
    # logs the failed checks before the first iteration
    checks = schedule.validate_params(meta, run.k_bar, run.w, run.c, run.mu)

    try:
        trace = costa.run_method(bundle.problem, run)
    except RunAbortedError as exc:
        trace = exc.trace
        summary = summarize(config, bundle, trace, meta, checks) if trace is not None and trace.records else None
        if summary is not None:
            write_run_outputs(config, bundle, trace, summary, out_dir)
        io_utils.write_failure_marker(out_dir, str(exc))
        if summary is None:
            return RunSummary(
                experiment=config.experiment.name,
                problem=config.experiment.problem,
                method=config.run.method,
                seed=config.run.seed,
                iterations=config.run.iterations,
                completed_iterations=0,
                aborted=True,
                abort_reason=str(exc),
            )
        return summary

    summary = summarize(config, bundle, trace, meta, checks)
    write_run_outputs(config, bundle, trace, summary, out_dir)
    logger.info(
        f"Run '{config.experiment.name}' ({trace.method}, seed {config.run.seed}) done: "
        f"average progress {summary.average_progress:.4e}, final feasibility {summary.final_feasibility:.2e}, "
        f"outputs in {out_dir}"
    )
    return summary


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def sweep_cells(config: ExperimentConfig) -> List[Tuple[str, int, int]]:
    """(method, T, seed) for every cell, in a fixed order."""
    iterations = config.sweep.iterations or [config.run.iterations]
    return [
        (method, T, seed)
        for method in config.sweep.methods
        for T in iterations
        for seed in config.sweep.seeds
    ]


def cell_dir(out_dir: Path, method: str, T: int, seed: int) -> Path:
    return Path(out_dir) / "cells" / f"{method}_T{T}_seed{seed}"


def run_cell(config: ExperimentConfig, method: str, T: int, seed: int, out_dir: str) -> Dict[str, Any]:
    """One sweep cell; top-level so worker processes can import it."""
    cell_config = with_run_overrides(config, method=method, iterations=T, seed=seed)
    summary = execute_run(cell_config, cell_dir(Path(out_dir), method, T, seed))
    row = {
        "method": method,
        "iterations": T,
        "seed": seed,
        "aborted": summary.aborted,
        "average_progress": summary.average_progress,
        "final_feasibility": summary.final_feasibility,
        "final_objective": summary.final_objective,
    }
    row.update(summary.metrics)
    logger.info(f"Cell {method} T={T} seed={seed} finished (aborted={summary.aborted})")
    return row


def sweep_tracking(config: ExperimentConfig, out_dir: Path, frame: pd.DataFrame) -> Dict[str, Any]:
    """
    Multi-seed tracking monitor per method, over the cells at that method's
    largest T. Methods without recorded tracking errors are left out.
    """
    if not config.output.trace or frame.empty:
        return {}
    reports: Dict[str, Any] = {}
    finished = frame[~frame["aborted"].astype(bool)]
    for method, group in finished.groupby("method", sort=True):
        T = int(group["iterations"].max())
        errors = []
        for seed in group.loc[group["iterations"] == T, "seed"]:
            column = pd.read_csv(cell_dir(out_dir, method, T, int(seed)) / io_utils.TRACE_FILE)["tracking_err_or_blank"]
            errors.append([None if pd.isna(v) else float(v) for v in column])
        report = monitors.tracking_report(errors)
        if report.status != CheckStatus.SKIPPED:
            reports[method] = report.model_dump(mode="json")
    return reports


def run_sweep(config: ExperimentConfig, out_dir: Union[str, Path], workers: Optional[int] = None) -> pd.DataFrame:
    """
    Run every (method, T, seed) cell, in parallel processes when workers > 1,
    then write the aggregate tables.

    Returns:
        One row per cell, sorted by method, T and seed
    """
    out_dir = io_utils.ensure_dir(out_dir)
    cells = sweep_cells(config)
    workers = workers or config.sweep.workers
    logger.info(f"Sweep '{config.experiment.name}': {len(cells)} cells on {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, config, m, T, s, str(out_dir)) for m, T, s in cells]
            rows = [f.result() for f in futures]
    else:
        rows = [run_cell(config, m, T, s, str(out_dir)) for m, T, s in cells]

    frame = pd.DataFrame(rows).sort_values(["method", "iterations", "seed"], kind="mergesort").reset_index(drop=True)
    io_utils.write_csv(frame, out_dir / io_utils.AGGREGATE_FILE)
    io_utils.write_csv(metrics.aggregate_stats(frame), out_dir / io_utils.AGGREGATE_STATS_FILE)

    wins, paired = metrics.paired_wins(frame)
    sweep_summary = {
        "experiment": config.experiment.name,
        "cells": len(frame),
        "slopes": metrics.slope_by_method(frame),
        "paired_wins": {"wins": wins, "seeds": paired},
        "tracking": sweep_tracking(config, out_dir, frame),
    }
    io_utils.write_json(sweep_summary, out_dir / io_utils.SWEEP_SUMMARY_FILE)
    io_utils.write_schema(out_dir, [io_utils.AGGREGATE_FILE, io_utils.AGGREGATE_STATS_FILE, io_utils.SWEEP_SUMMARY_FILE])
    logger.info(f"Sweep outputs written to {out_dir}")
    return frame
