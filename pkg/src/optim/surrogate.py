# src/optim/surrogate.py
"""
Convex surrogates of the objective and the non-convex constraints, plus the
validators that check them.

Objective:   f_hat(x)   = f(x_t, xi) + <grad f(x_t, xi), x - x_t> + (mu/2)||x - x_t||^2
Running:     f_tilde(x) = f_hat(x) + <x - x_t, z_{t+1} - grad f(x_t, xi)>
Constraints: g_tilde(x, x_t) convex, >= g(x), equal with matching gradient at x_t
"""

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Tuple
import logging

import numpy as np

from src.config import ANCHOR_EQUALITY_TOL, FD_STEP, MAJORIZATION_TOL, STRONG_CONVEXITY_TOL
from src.core.exceptions import InvalidConfigError, InvalidInputError
from src.core.problem import ConstraintBlock
from src.models.schemas import CheckStatus, ValidationCheck, ValidationReport
from src.utils.numerics import central_difference_jacobian

logger = logging.getLogger(__name__)

LINEAR = "linear"
CONVEX_COMPOSITE = "convex-composite"


@dataclass(frozen=True)
class ObjectiveSurrogate:
    """
    Strongly convex model of f anchored at x_t.

    With `curvature` set, the quadratic term is (1/2)(x-x_t)^T Q (x-x_t)
    and `mu` must be a lower bound on the eigenvalues of Q.
    """

    anchor: np.ndarray
    sampled_gradient: np.ndarray
    sampled_value: float
    mu: float
    curvature: Optional[np.ndarray] = None

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.anchor
        if self.curvature is None:
            quad = 0.5 * self.mu * float(d @ d)
        else:
            quad = 0.5 * float(d @ self.curvature @ d)
        return self.sampled_value + float(self.sampled_gradient @ d) + quad

    def gradient(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.anchor
        if self.curvature is None:
            return self.sampled_gradient + self.mu * d
        return self.sampled_gradient + self.curvature @ d

    @property
    def smoothness(self) -> float:
        """Lipschitz constant of the gradient."""
        if self.curvature is None:
            return self.mu
        return float(np.linalg.eigvalsh(self.curvature).max())


@dataclass(frozen=True)
class RunningSurrogate:
    """f_hat plus the linear correction q = z_{t+1} - grad f(x_t, xi_t)."""

    base: ObjectiveSurrogate
    correction: np.ndarray

    @property
    def anchor(self) -> np.ndarray:
        return self.base.anchor

    @property
    def mu(self) -> float:
        return self.base.mu

    @property
    def smoothness(self) -> float:
        return self.base.smoothness

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.base.anchor
        return self.base.value(x) + float(d @ self.correction)

    def gradient(self, x) -> np.ndarray:
        return self.base.gradient(x) + self.correction


@dataclass(frozen=True)
class ConstraintSurrogate:
    """
    Convex majorizer of one constraint block, anchored at x_t.

    `value(x)` has shape (m,), `jacobian(x)` shape (m, n).
    """

    name: str
    anchor: np.ndarray
    size: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    tag: str = LINEAR
    row_names: Tuple[str, ...] = field(default_factory=tuple)

    def labels(self) -> Tuple[str, ...]:
        if self.row_names:
            return self.row_names
        if self.size == 1:
            return (self.name,)
        return tuple(f"{self.name}[{k}]" for k in range(self.size))


def build_proximal_surrogate(
    x_t,
    sampled_gradient,
    sampled_value: float,
    mu: float,
    curvature: Optional[np.ndarray] = None,
) -> ObjectiveSurrogate:
    """
    Proximal-linear model of f at x_t.

    Raises:
        InvalidConfigError: If mu <= 0
        InvalidInputError: On shape mismatch
    """
    if not mu > 0:
        raise InvalidConfigError(f"surrogate modulus must be positive, got {mu}")
    x_t = np.asarray(x_t, dtype=float)
    grad = np.asarray(sampled_gradient, dtype=float)
    if x_t.shape != grad.shape or x_t.ndim != 1:
        raise InvalidInputError(f"anchor {x_t.shape} and gradient {grad.shape} must be matching vectors")
    if curvature is not None:
        curvature = np.asarray(curvature, dtype=float)
        if curvature.shape != (x_t.size, x_t.size):
            raise InvalidInputError(f"curvature must be ({x_t.size}, {x_t.size}), got {curvature.shape}")
    return ObjectiveSurrogate(
        anchor=x_t.copy(),
        sampled_gradient=grad.copy(),
        sampled_value=float(sampled_value),
        mu=float(mu),
        curvature=curvature,
    )


def build_running_surrogate(f_hat: ObjectiveSurrogate, z_next) -> RunningSurrogate:
    """Attach the tracking correction so that grad f_tilde(x_t) = z_next."""
    z_next = np.asarray(z_next, dtype=float)
    if z_next.shape != f_hat.anchor.shape:
        raise InvalidInputError(f"z_next has shape {z_next.shape}, expected {f_hat.anchor.shape}")
    return RunningSurrogate(base=f_hat, correction=z_next - f_hat.sampled_gradient)


def linearized_surrogate(block: ConstraintBlock, anchor) -> ConstraintSurrogate:
    """
    First-order model g(x_t) + J(x_t)(x - x_t).

    Majorizes g only when g is concave; callers pick it for such blocks.
    """
    anchor = np.asarray(anchor, dtype=float).copy()
    g0 = np.atleast_1d(np.asarray(block.value(anchor), dtype=float))
    J0 = np.atleast_2d(np.asarray(block.jacobian(anchor), dtype=float))
    return ConstraintSurrogate(
        name=block.name,
        anchor=anchor,
        size=block.size,
        value=lambda x: g0 + J0 @ (np.asarray(x, dtype=float) - anchor),
        jacobian=lambda x: J0,
        tag=LINEAR,
        row_names=block.row_names,
    )


def identity_surrogate(block: ConstraintBlock, anchor) -> ConstraintSurrogate:
    """g_tilde = g, valid for blocks that are already convex."""
    return ConstraintSurrogate(
        name=block.name,
        anchor=np.asarray(anchor, dtype=float).copy(),
        size=block.size,
        value=block.value,
        jacobian=block.jacobian,
        tag=CONVEX_COMPOSITE,
        row_names=block.row_names,
    )


# ---------------------------------------------------------------------------
# Validators
# ---------------------------------------------------------------------------

def _rows(fn: Callable, x) -> np.ndarray:
    return np.atleast_1d(np.asarray(fn(x), dtype=float))


def _surrogate_derivative(surrogate) -> Callable:
    if hasattr(surrogate, "jacobian"):
        return lambda x: np.atleast_2d(np.asarray(surrogate.jacobian(x), dtype=float))
    return lambda x: np.atleast_2d(np.asarray(surrogate.gradient(x), dtype=float))


def validate_tangent_match(
    surrogate,
    original: Callable[[np.ndarray], np.ndarray],
    anchor,
    step: float = FD_STEP,
    name: Optional[str] = None,
) -> ValidationReport:
    """
    Compare the surrogate's analytic gradient at the anchor with a central
    finite-difference gradient of the surrogate and with the original oracle.

    Args:
        surrogate: Object with value() and gradient() or jacobian()
        original: x -> gradient (or Jacobian) of the original function
        anchor: Anchor point
        step: Finite-difference step; tolerance is 10 * step^2
        name: Subject shown in the report

    Returns:
        ValidationReport with the two deviations
    """
    if not step > 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {step}")
    anchor = np.asarray(anchor, dtype=float)
    subject = name or getattr(surrogate, "name", "objective surrogate")
    tol = 10.0 * step ** 2

    analytic = _surrogate_derivative(surrogate)(anchor)
    numeric = central_difference_jacobian(surrogate.value, anchor, step)
    oracle = np.atleast_2d(np.asarray(original(anchor), dtype=float))

    fd_dev = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    oracle_dev = float(np.max(np.abs(analytic - oracle))) if analytic.size else 0.0

    report = ValidationReport(subject=f"tangent match: {subject}")
    report.checks.append(ValidationCheck(
        name=f"{subject}: gradient vs finite differences",
        status=CheckStatus.PASS if fd_dev <= tol else CheckStatus.FAIL,
        value=fd_dev,
        threshold=tol,
    ))
    report.checks.append(ValidationCheck(
        name=f"{subject}: gradient vs original oracle",
        status=CheckStatus.PASS if oracle_dev <= tol else CheckStatus.FAIL,
        value=oracle_dev,
        threshold=tol,
    ))
    return report


def validate_majorization(
    surrogate,
    original: Callable[[np.ndarray], np.ndarray],
    sampler: Callable[[np.random.Generator], np.ndarray],
    m: int,
    rng: np.random.Generator,
    name: Optional[str] = None,
) -> ValidationReport:
    """
    Sample points and check g_tilde(x, x_t) - g(x) >= -1e-10 on every row,
    plus equality at the anchor within 1e-12 (relative to the value scale).

    Returns:
        ValidationReport; the gap check names the worst row
    """
    if m < 1:
        raise InvalidInputError(f"sample count must be at least 1, got {m}")
    anchor = np.asarray(surrogate.anchor, dtype=float)
    subject = name or getattr(surrogate, "name", "constraint surrogate")
    labels = surrogate.labels() if hasattr(surrogate, "labels") else ()

    min_gap = np.inf
    worst_row = 0
    for _ in range(m):
        x = sampler(rng)
        gaps = _rows(surrogate.value, x) - _rows(original, x)
        if gaps.size == 0:
            continue
        k = int(np.argmin(gaps))
        if gaps[k] < min_gap:
            min_gap, worst_row = float(gaps[k]), k
    if not np.isfinite(min_gap):
        min_gap = 0.0

    g_anchor = _rows(original, anchor)
    anchor_dev = float(np.max(np.abs(_rows(surrogate.value, anchor) - g_anchor))) if g_anchor.size else 0.0
    anchor_tol = ANCHOR_EQUALITY_TOL * max(1.0, float(np.max(np.abs(g_anchor))) if g_anchor.size else 1.0)

    row = labels[worst_row] if worst_row < len(labels) else f"{subject}[{worst_row}]"
    report = ValidationReport(subject=f"majorization: {subject}")
    report.checks.append(ValidationCheck(
        name=f"{subject}: min gap over {m} samples",
        status=CheckStatus.PASS if min_gap >= -MAJORIZATION_TOL else CheckStatus.FAIL,
        value=min_gap,
        threshold=-MAJORIZATION_TOL,
        message=f"worst row {row}",
    ))
    report.checks.append(ValidationCheck(
        name=f"{subject}: equality at anchor",
        status=CheckStatus.PASS if anchor_dev <= anchor_tol else CheckStatus.FAIL,
        value=anchor_dev,
        threshold=anchor_tol,
    ))
    return report


def validate_strong_convexity(
    surrogate,
    mu: float,
    m: int,
    rng: np.random.Generator,
    scale: float = 1.0,
    pairs: Optional[Iterable[Tuple[np.ndarray, np.ndarray]]] = None,
    name: Optional[str] = None,
) -> ValidationReport:
    """
    Check <grad s(x) - grad s(y), x - y> >= mu ||x - y||^2 - 1e-10 over m
    random pairs drawn around the anchor, or over the given pairs.
    """
    if m < 1:
        raise InvalidInputError(f"pair count must be at least 1, got {m}")
    anchor = np.asarray(surrogate.anchor, dtype=float)
    if pairs is None:
        pairs = (
            (anchor + scale * rng.standard_normal(anchor.size), anchor + scale * rng.standard_normal(anchor.size))
            for _ in range(m)
        )

    min_slack = np.inf
    for x, y in pairs:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        slack = float((surrogate.gradient(x) - surrogate.gradient(y)) @ d) - mu * float(d @ d)
        min_slack = min(min_slack, slack)

    subject = name or "objective surrogate"
    report = ValidationReport(subject=f"strong convexity: {subject}")
    report.checks.append(ValidationCheck(
        name=f"{subject}: min slack at modulus {mu:g}",
        status=CheckStatus.PASS if min_slack >= -STRONG_CONVEXITY_TOL else CheckStatus.FAIL,
        value=float(min_slack),
        threshold=-STRONG_CONVEXITY_TOL,
    ))
    return report
