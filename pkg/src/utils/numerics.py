# src/utils/numerics.py
"""
Small numerical helpers: finite differences and RNG streams.
"""

from typing import Callable, Tuple

import numpy as np

# 4th-order central stencil: f'(x) ~ (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h
_STENCIL_OFFSETS = (-2.0, -1.0, 1.0, 2.0)
_STENCIL_WEIGHTS = (1.0, -8.0, 8.0, -1.0)


def central_difference_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float,
) -> np.ndarray:
    """
    Jacobian of a vector (or scalar) function by 4th-order central differences.

    Args:
        fn: Map x -> array of shape (m,) or scalar
        x: Point of evaluation
        step: Difference step h

    Returns:
        Array of shape (m, n); scalar functions give m = 1
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    columns = []
    for i in range(n):
        acc = None
        for offset, weight in zip(_STENCIL_OFFSETS, _STENCIL_WEIGHTS):
            shifted = x.copy()
            shifted[i] += offset * step
            val = weight * np.atleast_1d(np.asarray(fn(shifted), dtype=float))
            acc = val if acc is None else acc + val
        columns.append(acc / (12.0 * step))
    return np.column_stack(columns)


def central_difference_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    return central_difference_jacobian(fn, x, step)[0]


def spawn_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """
    Independent generators for the algorithm and for reporting.

    Reporting draws (Monte-Carlo objective and KKT estimates) never perturb
    the algorithm's sample path.
    """
    algo, report = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(algo), np.random.default_rng(report)
