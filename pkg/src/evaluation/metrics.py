# src/evaluation/metrics.py
"""
Sweep metrics: rate-slope fits, per-cell aggregation and paired comparisons.
"""

from typing import Dict, Iterable, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from src.core.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

AGGREGATE_VALUES = ["average_progress", "final_feasibility", "final_objective", "train_accuracy", "test_accuracy"]


def rate_slope(iterations: Sequence[float], progress: Sequence[float]) -> float:
    """
    Least-squares slope of log(progress) against log(T).

    Args:
        iterations: T values, at least two distinct
        progress: Average progress Delta_T for each T

    Returns:
        Fitted slope (about -1/3 for the sample-efficient rate)

    Raises:
        InvalidInputError: On mismatched lengths, fewer than two distinct T,
            or nonpositive entries
    """
    T = np.asarray(iterations, dtype=float)
    D = np.asarray(progress, dtype=float)
    if T.shape != D.shape:
        raise InvalidInputError(f"{T.size} T values for {D.size} progress values")
    if np.unique(T).size < 2:
        raise InvalidInputError("slope fit needs at least two distinct T values")
    if (T <= 0).any() or (D <= 0).any():
        raise InvalidInputError("slope fit needs positive T and progress values")
    slope, _ = np.polyfit(np.log(T), np.log(D), 1)
    return float(slope)


def slope_by_method(cells: pd.DataFrame) -> Dict[str, float]:
    """Slope of the seed-averaged progress per method; methods with one T are skipped."""
    slopes = {}
    completed = cells[~cells["aborted"]] if "aborted" in cells else cells
    for method, group in completed.groupby("method"):
        means = group.groupby("iterations")["average_progress"].mean().dropna()
        if len(means) < 2:
            logger.debug(f"No slope for {method}: {len(means)} T value(s)")
            continue
        slopes[str(method)] = rate_slope(means.index.to_numpy(), means.to_numpy())
    return slopes


def aggregate_stats(cells: pd.DataFrame, values: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """
    Mean and standard deviation per (method, iterations).

    Columns are flattened to `<value>_mean` / `<value>_std`; only columns
    present in `cells` are aggregated.
    """
    wanted = [v for v in (values or AGGREGATE_VALUES) if v in cells.columns]
    grouped = cells.groupby(["method", "iterations"], sort=True)[wanted].agg(["mean", "std"])
    grouped.columns = [f"{value}_{stat}" for value, stat in grouped.columns]
    counts = cells.groupby(["method", "iterations"], sort=True).size().rename("cells")
    return pd.concat([counts, grouped], axis=1).reset_index()


def paired_wins(
    cells: pd.DataFrame,
    metric: str = "average_progress",
    better: str = "costa",
    worse: str = "classical",
    iterations: Optional[int] = None,
) -> Tuple[int, int]:
    """
    Count seeds where `better` scores no higher than `worse` on `metric`.

    Only seeds with both methods present (and not aborted) count. With
    `iterations` unset, the largest shared T is used.

    Returns:
        (wins, paired seeds)
    """
    frame = cells[~cells["aborted"]] if "aborted" in cells else cells
    frame = frame[frame["method"].isin([better, worse])]
    if frame.empty:
        return 0, 0
    if iterations is None:
        shared = set(frame[frame["method"] == better]["iterations"]) & set(frame[frame["method"] == worse]["iterations"])
        if not shared:
            return 0, 0
        iterations = max(shared)
    frame = frame[frame["iterations"] == iterations]
    table = frame.pivot_table(index="seed", columns="method", values=metric, aggfunc="first")
    if better not in table or worse not in table:
        return 0, 0
    table = table.dropna(subset=[better, worse])
    wins = int((table[better] <= table[worse]).sum())
    return wins, int(len(table))
