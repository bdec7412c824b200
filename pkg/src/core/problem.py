# src/core/problem.py
"""
Problem abstraction shared by every other module.

A StochasticProblem describes

    minimize    U(x) + u(x),    U(x) = E[f(x, xi)]
    subject to  g(x) <= 0       (smooth, possibly non-convex)
                h(x) <= 0       (smooth, convex)

Constraints come in vector-valued blocks: a block returns all its rows at once
(value shape (m,), Jacobian shape (m, n)). Non-convex blocks also carry a
surrogate builder that returns a convex majorizer anchored at a point.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Optional, Sequence, Tuple
import logging

import numpy as np

from src.core.exceptions import InvalidInputError
from src.models.schemas import SmoothnessMeta

if TYPE_CHECKING:
    from src.optim.surrogate import ConstraintSurrogate

logger = logging.getLogger(__name__)

Vector = np.ndarray
Sampler = Callable[[np.random.Generator], Any]


@dataclass(frozen=True)
class Regularizer:
    """
    Convex regularizer u.

    `prox(v, step)` returns argmin_x u(x) + ||x - v||^2 / (2 step).
    `subdifferential_box(x)` returns per-coordinate bounds (lo, hi) of the
    subdifferential for separable u.
    """

    value: Callable[[Vector], float]
    subgradient: Callable[[Vector], Vector]
    prox: Optional[Callable[[Vector, float], Vector]] = None
    subdifferential_box: Optional[Callable[[Vector], Tuple[Vector, Vector]]] = None
    name: str = "custom"
    is_zero: bool = False


def zero_regularizer() -> Regularizer:
    return Regularizer(
        value=lambda x: 0.0,
        subgradient=lambda x: np.zeros_like(x, dtype=float),
        prox=lambda v, step: np.array(v, dtype=float, copy=True),
        subdifferential_box=lambda x: (np.zeros_like(x, dtype=float), np.zeros_like(x, dtype=float)),
        name="zero",
        is_zero=True,
    )


def l1_regularizer(weight: float) -> Regularizer:
    """u(x) = weight * ||x||_1 with soft-thresholding prox."""
    if weight < 0:
        raise InvalidInputError(f"l1 weight must be nonnegative, got {weight}")

    def box(x: Vector) -> Tuple[Vector, Vector]:
        x = np.asarray(x, dtype=float)
        lo = np.where(x > 0, weight, -weight).astype(float)
        hi = np.where(x < 0, -weight, weight).astype(float)
        return lo, hi

    return Regularizer(
        value=lambda x: weight * float(np.abs(x).sum()),
        subgradient=lambda x: weight * np.sign(x),
        prox=lambda v, step: np.sign(v) * np.maximum(np.abs(v) - weight * step, 0.0),
        subdifferential_box=box,
        name=f"l1({weight:g})",
    )


@dataclass(frozen=True)
class ConstraintBlock:
    """
    Block of m scalar constraints c_k(x) <= 0.

    Args:
        name: Block name used in reports
        size: Number of rows m
        value: x -> array (m,)
        jacobian: x -> array (m, n)
        surrogate: anchor -> ConstraintSurrogate (required for non-convex blocks)
        row_names: Optional per-row labels
        equality: Rows come as (r(x), -r(x)) and encode r(x) = 0
    """

    name: str
    size: int
    value: Callable[[Vector], Vector]
    jacobian: Callable[[Vector], np.ndarray]
    surrogate: Optional[Callable[[Vector], "ConstraintSurrogate"]] = None
    row_names: Tuple[str, ...] = ()
    equality: bool = False

    def labels(self) -> Tuple[str, ...]:
        if self.row_names:
            return self.row_names
        if self.size == 1:
            return (self.name,)
        return tuple(f"{self.name}[{k}]" for k in range(self.size))


@dataclass(frozen=True)
class StochasticProblem:
    """
    Oracles and metadata of one constrained stochastic program.

    `sample(rng)` draws an opaque token xi; `value(x, xi)` and
    `gradient(x, xi)` evaluate f and its gradient at that token. The
    optional `expected_value` / `expected_gradient` give U and its gradient
    exactly and enable deterministic mode.
    """

    name: str
    dimension: int
    sample: Sampler
    value: Callable[[Vector, Any], float]
    gradient: Callable[[Vector, Any], Vector]
    regularizer: Regularizer = field(default_factory=zero_regularizer)
    nonconvex: Tuple[ConstraintBlock, ...] = ()
    convex: Tuple[ConstraintBlock, ...] = ()
    meta: SmoothnessMeta = field(default_factory=SmoothnessMeta)
    expected_value: Optional[Callable[[Vector], float]] = None
    expected_gradient: Optional[Callable[[Vector], Vector]] = None
    initial_point: Optional[Vector] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidInputError(f"dimension must be positive, got {self.dimension}")
        for block in self.nonconvex:
            if block.surrogate is None:
                raise InvalidInputError(f"non-convex block '{block.name}' has no surrogate builder")

    @property
    def has_expectation(self) -> bool:
        return self.expected_value is not None and self.expected_gradient is not None

    @property
    def n_nonconvex(self) -> int:
        return sum(b.size for b in self.nonconvex)

    @property
    def n_convex(self) -> int:
        return sum(b.size for b in self.convex)

    def check_point(self, x) -> Vector:
        """Coerce to a float vector of the problem dimension."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise InvalidInputError(f"expected a vector of shape ({self.dimension},), got {x.shape}")
        return x

    def nonconvex_values(self, x: Vector) -> Vector:
        return _stack_values(self.nonconvex, x)

    def convex_values(self, x: Vector) -> Vector:
        return _stack_values(self.convex, x)

    def nonconvex_jacobian(self, x: Vector) -> np.ndarray:
        return _stack_jacobians(self.nonconvex, x, self.dimension)

    def convex_jacobian(self, x: Vector) -> np.ndarray:
        return _stack_jacobians(self.convex, x, self.dimension)

    def convex_equality_mask(self) -> np.ndarray:
        """True on convex rows that belong to an equality block."""
        if not self.convex:
            return np.zeros(0, dtype=bool)
        return np.concatenate([np.full(b.size, b.equality) for b in self.convex])


def _stack_values(blocks: Sequence[ConstraintBlock], x: Vector) -> Vector:
    if not blocks:
        return np.zeros(0)
    return np.concatenate([np.atleast_1d(np.asarray(b.value(x), dtype=float)) for b in blocks])


def _stack_jacobians(blocks: Sequence[ConstraintBlock], x: Vector, n: int) -> np.ndarray:
    if not blocks:
        return np.zeros((0, n))
    return np.vstack([np.atleast_2d(np.asarray(b.jacobian(x), dtype=float)) for b in blocks])


def feasibility_violation(problem: StochasticProblem, x) -> float:
    """
    max(0, max_j g_j(x), max_i h_i(x)); 0 when there are no constraints.

    Raises:
        InvalidInputError: If x has the wrong dimension
    """
    x = problem.check_point(x)
    worst = 0.0
    for values in (problem.nonconvex_values(x), problem.convex_values(x)):
        if values.size:
            worst = max(worst, float(values.max()))
    return worst


def estimate_expected_objective(
    problem: StochasticProblem,
    x,
    m: int,
    rng: np.random.Generator,
) -> float:
    """
    Monte-Carlo estimate of U(x) + u(x) from m fresh samples.

    Args:
        problem: Problem to evaluate
        x: Point
        m: Number of samples
        rng: Generator owned by the caller

    Returns:
        (1/m) sum_k f(x, xi_k) + u(x)
    """
    if m < 1:
        raise InvalidInputError(f"sample count must be at least 1, got {m}")
    x = problem.check_point(x)
    total = 0.0
    for _ in range(m):
        total += float(problem.value(x, problem.sample(rng)))
    return total / m + float(problem.regularizer.value(x))


def monte_carlo_gradient(
    problem: StochasticProblem,
    x: Vector,
    m: int,
    rng: np.random.Generator,
) -> Vector:
    """Average of m sampled gradients at x."""
    if m < 1:
        raise InvalidInputError(f"sample count must be at least 1, got {m}")
    acc = np.zeros(problem.dimension)
    for _ in range(m):
        acc += problem.gradient(x, problem.sample(rng))
    return acc / m


def select_subgradient(regularizer: Regularizer, x: Vector, smooth_part: Vector) -> Vector:
    """
    Element v of du(x) used in stationarity residuals.

    For separable u the choice minimizing ||smooth_part + v|| is a
    per-coordinate clamp of -smooth_part into the subdifferential box;
    otherwise the regularizer's own subgradient is used.
    """
    if regularizer.is_zero:
        return np.zeros_like(smooth_part)
    if regularizer.subdifferential_box is not None:
        lo, hi = regularizer.subdifferential_box(x)
        return np.clip(-smooth_part, lo, hi)
    return np.asarray(regularizer.subgradient(x), dtype=float)
