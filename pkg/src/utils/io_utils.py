# src/utils/io_utils.py
"""
Result-file writers. Everything written here is a pure function of the run,
so identical runs produce identical files.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Sequence, Tuple, Type, Union, get_args
import inspect
import json
import logging

import pandas as pd
from pydantic import BaseModel

from src.models.schemas import MonitorReport, RunSummary, ValidationReport
from src.optim.costa import TRACE_COLUMNS, RunTrace

logger = logging.getLogger(__name__)

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
PLOT_OBJECTIVE_FILE = "plot_objective.csv"
PLOT_TRAJECTORY_FILE = "plot_trajectory.csv"
SCHEMA_FILE = "schema.json"
VALIDATION_FILE = "validation.json"
FAILED_MARKER = "FAILED"
AGGREGATE_FILE = "aggregate.csv"
AGGREGATE_STATS_FILE = "aggregate_stats.csv"
SWEEP_SUMMARY_FILE = "sweep_summary.json"

PLOT_OBJECTIVE_COLUMNS = ["t", "oracle_calls_gradient", "oracle_calls_sample", "objective_est"]
PLOT_TRAJECTORY_COLUMNS = ["agent", "tau", "x", "y"]

PROBLEM_METRICS: Dict[str, str] = {
    "train_accuracy": "classification accuracy on the training split",
    "test_accuracy": "classification accuracy on the test split",
    "nonzeros": "coordinates of the last iterate with |x_i| > 1e-6",
    "optimized_energy": "Monte-Carlo expected energy of the last iterate",
    "straight_line_energy": "same estimate for the straight-line path, common random numbers",
    "energy_ratio": "optimized_energy / straight_line_energy",
    "goal_error": "largest distance between an agent's final waypoint and its goal",
}


def _nested_models(annotation: Any) -> Iterator[Type[BaseModel]]:
    if inspect.isclass(annotation) and issubclass(annotation, BaseModel):
        yield annotation
        return
    for arg in get_args(annotation):
        yield from _nested_models(arg)


def field_descriptions(model: Type[BaseModel], prefix: str = "") -> Dict[str, str]:
    """
    Field descriptions of a model, nested models flattened as dotted keys
    (list items share their list's prefix).
    """
    out: Dict[str, str] = {}
    for name, field in model.model_fields.items():
        key = f"{prefix}{name}"
        out[key] = field.description or ""
        for nested in _nested_models(field.annotation):
            out.update(field_descriptions(nested, prefix=f"{key}."))
    return out


def _summary_schema() -> Dict[str, str]:
    schema = field_descriptions(RunSummary)
    schema.update({f"metrics.{name}": text for name, text in PROBLEM_METRICS.items()})
    return schema


OUTPUT_SCHEMA: Dict[str, Dict[str, str]] = {
    TRACE_FILE: {
        "t": "iteration index, 1-based",
        "eta": "step size eta_t",
        "beta": "momentum beta_t before clipping (classical baseline: averaging rate rho_t)",
        "delta_norm": "||x_hat_t - x_t||",
        "feasibility": "max(0, max constraint value) at x_{t+1}",
        "dual_norm_l1": "||lambda_t||_1 + ||nu_t||_1 of the subproblem solution",
        "objective_est": "U(x_{t+1}) + u(x_{t+1}); exact in deterministic mode, Monte-Carlo otherwise",
        "tracking_err_or_blank": "||z_{t+1} - grad U(x_t)||; blank when not computed",
    },
    PLOT_OBJECTIVE_FILE: {
        "t": "iteration index",
        "oracle_calls_gradient": "cumulative gradient evaluations (two per iteration for the tracked method)",
        "oracle_calls_sample": "cumulative samples drawn (one per iteration)",
        "objective_est": "same as in trace.csv",
    },
    PLOT_TRAJECTORY_FILE: {
        "agent": "agent index",
        "tau": "waypoint index, 0 is the fixed start",
        "x": "first coordinate",
        "y": "second coordinate",
    },
    SUMMARY_FILE: _summary_schema(),
    VALIDATION_FILE: field_descriptions(ValidationReport),
    AGGREGATE_FILE: {
        "method": "costa or classical",
        "iterations": "T of the cell",
        "seed": "seed of the cell",
        "aborted": "true when the cell stopped early",
        "average_progress": "Delta_T of the cell",
        "final_feasibility": "feasibility of the last iterate",
        "final_objective": "objective estimate at the last iterate",
        **{name: f"{text}; blank for other problems" for name, text in PROBLEM_METRICS.items()},
    },
    AGGREGATE_STATS_FILE: {
        "method": "costa or classical",
        "iterations": "T of the group",
        "cells": "number of cells per (method, iterations)",
        "<value>_mean": "mean over seeds of an aggregate.csv value column",
        "<value>_std": "sample standard deviation over seeds",
    },
    SWEEP_SUMMARY_FILE: {
        "experiment": "[experiment].name",
        "cells": "number of cells run",
        "slopes": "least-squares slope of log Delta_T against log T per method",
        "slopes.costa": "slope of the tracked method",
        "slopes.classical": "slope of the classical-tracking baseline",
        "paired_wins": "comparison at the largest T shared by both methods",
        "paired_wins.wins": "seeds where costa's Delta_T is no larger than classical's",
        "paired_wins.seeds": "seeds with a non-aborted cell for both methods",
        "tracking": "multi-seed tracking monitor per method at its largest T; methods without tracking errors omitted",
        **field_descriptions(MonitorReport, prefix="tracking.<method>."),
    },
}


def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, na_rep="", encoding="utf-8", lineterminator="\n")
    return path


def write_json(payload: Any, path: Path) -> Path:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_trace(trace: RunTrace, out_dir: Path) -> Path:
    path = write_csv(trace.to_frame(), Path(out_dir) / TRACE_FILE)
    logger.info(f"Wrote {len(trace)} trace rows to {path}")
    return path


def write_plot_objective(trace: RunTrace, out_dir: Path) -> Path:
    rows = [
        (r.t, r.oracle_calls_gradient, r.oracle_calls_sample, r.objective_est)
        for r in trace.records
    ]
    return write_csv(pd.DataFrame(rows, columns=PLOT_OBJECTIVE_COLUMNS), Path(out_dir) / PLOT_OBJECTIVE_FILE)


def write_plot_trajectory(rows: Iterable[Tuple[int, int, float, float]], out_dir: Path) -> Path:
    return write_csv(pd.DataFrame(list(rows), columns=PLOT_TRAJECTORY_COLUMNS), Path(out_dir) / PLOT_TRAJECTORY_FILE)


def write_schema(out_dir: Path, files: Sequence[str]) -> Path:
    """Document the columns and fields of the files written beside it."""
    schema = {name: OUTPUT_SCHEMA[name] for name in files if name in OUTPUT_SCHEMA}
    if TRACE_FILE in files:
        schema["trace_columns"] = list(TRACE_COLUMNS)
    return write_json(schema, Path(out_dir) / SCHEMA_FILE)


def write_failure_marker(out_dir: Path, reason: str) -> Path:
    path = Path(out_dir) / FAILED_MARKER
    path.write_text(reason.rstrip() + "\n", encoding="utf-8")
    logger.error(f"Run failed, marker written to {path}")
    return path
