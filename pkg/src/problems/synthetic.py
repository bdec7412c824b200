# src/problems/synthetic.py
"""
Small synthetic problems used by the harness and the tests.

- stochastic quadratic: f(x, xi) = 0.5 ||x - b||^2 + <xi, x>, xi ~ N(0, sigma^2 I)
- exterior of a ball:   f(x) = ||x - a||^2 s.t. r^2 - ||x||^2 <= 0
"""

from dataclasses import replace
from typing import Optional, Sequence
import logging
import math

import numpy as np

from src.core.exceptions import InvalidInputError
from src.core.problem import ConstraintBlock, StochasticProblem
from src.models.schemas import SmoothnessMeta
from src.optim.surrogate import linearized_surrogate

logger = logging.getLogger(__name__)


def build_quadratic_problem(
    dimension: int = 10,
    sigma: float = 1.0,
    center: Optional[Sequence[float]] = None,
    radius: Optional[float] = None,
    initial_point: Optional[Sequence[float]] = None,
) -> StochasticProblem:
    """
    Strongly convex quadratic with additive linear noise.

    U(x) = 0.5 ||x - b||^2 exactly, so deterministic mode and exact tracking
    errors are available. With `radius`, the convex constraint
    ||x||^2 - radius^2 <= 0 is added.
    """
    b = np.ones(dimension) if center is None else np.asarray(center, dtype=float)
    if b.shape != (dimension,):
        raise InvalidInputError(f"center must have {dimension} entries")

    def sample(rng: np.random.Generator) -> np.ndarray:
        return sigma * rng.standard_normal(dimension)

    def value(x, xi) -> float:
        d = x - b
        return 0.5 * float(d @ d) + float(xi @ x)

    def gradient(x, xi) -> np.ndarray:
        return x - b + xi

    convex = ()
    if radius is not None:
        r2 = radius ** 2
        convex = (ConstraintBlock(
            name="ball",
            size=1,
            value=lambda x: np.array([float(x @ x) - r2]),
            jacobian=lambda x: (2.0 * x)[None, :],
        ),)

    x1 = np.full(dimension, -1.0) if initial_point is None else np.asarray(initial_point, dtype=float)
    if radius is not None and initial_point is None:
        x1 = np.zeros(dimension)

    meta = SmoothnessMeta(
        L=1.0,
        sigma=sigma * math.sqrt(dimension),
        mu=1.0,
        B_1=0.5 * float((x1 - b) @ (x1 - b)),
    )
    logger.info(f"Built stochastic quadratic: n={dimension}, sigma={sigma}, constrained={radius is not None}")
    return StochasticProblem(
        name="synthetic-quadratic",
        dimension=dimension,
        sample=sample,
        value=value,
        gradient=gradient,
        convex=convex,
        meta=meta,
        expected_value=lambda x: 0.5 * float((x - b) @ (x - b)),
        expected_gradient=lambda x: x - b,
        initial_point=x1,
    )


def build_exterior_ball_problem(
    target: Sequence[float] = (0.2, 0.0),
    radius: float = 1.0,
) -> StochasticProblem:
    """
    Deterministic f(x) = ||x - target||^2 outside the ball of given radius.

    The constraint r^2 - ||x||^2 <= 0 is concave, so its linearization is a
    valid majorizing surrogate. Samples are a dummy token.
    """
    a = np.asarray(target, dtype=float)
    r2 = radius ** 2

    def value(x, xi=None) -> float:
        d = x - a
        return float(d @ d)

    def gradient(x, xi=None) -> np.ndarray:
        return 2.0 * (x - a)

    base = ConstraintBlock(
        name="exterior",
        size=1,
        value=lambda x: np.array([r2 - float(x @ x)]),
        jacobian=lambda x: (-2.0 * x)[None, :],
    )
    outside = replace(base, surrogate=lambda anchor: linearized_surrogate(base, anchor))

    x1 = np.array([0.0, radius])
    optimum = max(0.0, radius - float(np.linalg.norm(a))) ** 2

    return StochasticProblem(
        name="exterior-ball",
        dimension=2,
        sample=lambda rng: None,
        value=value,
        gradient=gradient,
        nonconvex=(outside,),
        meta=SmoothnessMeta(L=2.0, sigma=0.0, mu=2.0, B_1=value(x1) - optimum),
        expected_value=value,
        expected_gradient=gradient,
        initial_point=x1,
    )
