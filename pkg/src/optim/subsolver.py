# src/optim/subsolver.py
"""
Solver for the per-iteration convex subproblem

    minimize    f_tilde(x) + u(x)
    subject to  g_tilde(x, x_t) <= 0,  h(x) <= 0

Augmented-Lagrangian outer loop on the multipliers, accelerated proximal
gradient inner loop on x (the prox absorbs u).
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import logging
import math

import numpy as np

from src.config import (
    SUBSOLVER_INFEASIBLE_TOL,
    SUBSOLVER_MAX_INNER,
    SUBSOLVER_MAX_OUTER,
    SUBSOLVER_PENALTY_GROWTH,
    SUBSOLVER_PENALTY_INIT,
    SUBSOLVER_PENALTY_MAX,
    SUBSOLVER_TOL,
)
from src.core.exceptions import InvalidInputError, SubproblemInfeasibleError
from src.core.problem import ConstraintBlock, Regularizer, select_subgradient
from src.models.schemas import SubproblemResiduals
from src.optim.surrogate import ConstraintSurrogate, RunningSurrogate

logger = logging.getLogger(__name__)

_MAX_LIPSCHITZ = 1e20


@dataclass(frozen=True)
class ConvexSubproblem:
    objective: RunningSurrogate
    regularizer: Regularizer
    surrogates: Tuple[ConstraintSurrogate, ...]
    convex: Tuple[ConstraintBlock, ...]
    anchor: np.ndarray
    mu: float

    def __post_init__(self):
        if self.anchor.ndim != 1:
            raise InvalidInputError("anchor must be a vector")

    @property
    def dimension(self) -> int:
        return self.anchor.size

    @property
    def n_g(self) -> int:
        return sum(s.size for s in self.surrogates)

    @property
    def n_h(self) -> int:
        return sum(b.size for b in self.convex)

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        parts = [np.atleast_1d(np.asarray(s.value(x), dtype=float)) for s in self.surrogates]
        parts += [np.atleast_1d(np.asarray(b.value(x), dtype=float)) for b in self.convex]
        return np.concatenate(parts) if parts else np.zeros(0)

    def constraint_jacobian(self, x: np.ndarray) -> np.ndarray:
        parts = [np.atleast_2d(np.asarray(s.jacobian(x), dtype=float)) for s in self.surrogates]
        parts += [np.atleast_2d(np.asarray(b.jacobian(x), dtype=float)) for b in self.convex]
        return np.vstack(parts) if parts else np.zeros((0, self.dimension))


@dataclass(frozen=True)
class SubproblemSolution:
    x: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    residuals: SubproblemResiduals
    iterations: int
    outer_iterations: int
    converged: bool
    subgradient: np.ndarray

    @property
    def dual_norm_l1(self) -> float:
        return float(np.abs(self.lam).sum() + np.abs(self.nu).sum())


def build_subproblem(
    objective: RunningSurrogate,
    regularizer: Regularizer,
    surrogates: Sequence[ConstraintSurrogate],
    convex: Sequence[ConstraintBlock],
) -> ConvexSubproblem:
    return ConvexSubproblem(
        objective=objective,
        regularizer=regularizer,
        surrogates=tuple(surrogates),
        convex=tuple(convex),
        anchor=np.asarray(objective.anchor, dtype=float),
        mu=objective.mu,
    )


def kkt_residuals(sub: ConvexSubproblem, candidate: SubproblemSolution) -> SubproblemResiduals:
    """
    Recompute the three KKT residuals of a candidate from the oracles.

    stationarity     ||grad f_tilde(x) + v + J_g^T lam + J_h^T nu||
    primal violation max(0, max_k c_k(x))
    complementarity  max_k |y_k c_k(x)|
    """
    residuals, _ = _residuals_with_subgradient(sub, candidate.x, candidate.lam, candidate.nu)
    return residuals


def _residuals_with_subgradient(
    sub: ConvexSubproblem,
    x: np.ndarray,
    lam: np.ndarray,
    nu: np.ndarray,
) -> Tuple[SubproblemResiduals, np.ndarray]:
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if x.shape != sub.anchor.shape or lam.size != sub.n_g or nu.size != sub.n_h:
        raise InvalidInputError(
            f"candidate shapes x {x.shape}, lam {lam.shape}, nu {nu.shape} do not match the subproblem"
        )
    y = np.concatenate([lam, nu])
    c = sub.constraint_values(x)
    smooth = sub.objective.gradient(x)
    if y.size:
        smooth = smooth + sub.constraint_jacobian(x).T @ y
    v = select_subgradient(sub.regularizer, x, smooth)
    residuals = SubproblemResiduals(
        stationarity=float(np.linalg.norm(smooth + v)),
        primal_violation=float(max(0.0, c.max())) if c.size else 0.0,
        complementarity=float(np.max(np.abs(y * c))) if c.size else 0.0,
    )
    return residuals, v


class _AugmentedLagrangian:
    """s(x) = f_tilde(x) + (1/2 rho) sum [max(0, y + rho c(x))^2 - y^2]."""

    def __init__(self, sub: ConvexSubproblem, y: np.ndarray, rho: float):
        self.sub = sub
        self.y = y
        self.rho = rho

    def value(self, x: np.ndarray) -> float:
        val = self.sub.objective.value(x)
        if self.y.size:
            p = np.maximum(0.0, self.y + self.rho * self.sub.constraint_values(x))
            val += (float(p @ p) - float(self.y @ self.y)) / (2.0 * self.rho)
        return val

    def gradient(self, x: np.ndarray) -> np.ndarray:
        grad = self.sub.objective.gradient(x)
        if self.y.size:
            p = np.maximum(0.0, self.y + self.rho * self.sub.constraint_values(x))
            grad = grad + self.sub.constraint_jacobian(x).T @ p
        return grad


def _proximal_gradient(
    s: _AugmentedLagrangian,
    reg: Regularizer,
    x0: np.ndarray,
    lipschitz: float,
    tol: float,
    max_iter: int,
) -> Tuple[np.ndarray, int, float]:
    """
    FISTA with backtracking and gradient-based adaptive restart.

    Stops when r = grad s(x+) - grad s(v) - L (x+ - v), an element of
    grad s(x+) + du(x+), has norm <= tol.
    """
    x = x0.copy()
    v = x0.copy()
    theta = 1.0
    L = lipschitz
    grad_v = s.gradient(v)
    for k in range(1, max_iter + 1):
        s_v = s.value(v)
        while True:
            step = 1.0 / L
            if reg.prox is not None:
                x_new = reg.prox(v - step * grad_v, step)
            else:
                x_new = v - step * (grad_v + reg.subgradient(v))
            d = x_new - v
            bound = s_v + float(grad_v @ d) + 0.5 * L * float(d @ d)
            if s.value(x_new) <= bound + 1e-14 * max(1.0, abs(s_v)) or L >= _MAX_LIPSCHITZ:
                break
            L *= 2.0

        grad_new = s.gradient(x_new)
        if reg.prox is not None:
            r = grad_new - grad_v - L * d
        else:
            r = grad_new + reg.subgradient(x_new)
        if np.linalg.norm(r) <= tol:
            return x_new, k, L

        theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        if float((v - x_new) @ (x_new - x)) > 0.0:
            theta = 1.0
            v = x_new
            grad_v = grad_new
        else:
            v = x_new + ((theta - 1.0) / theta_next) * (x_new - x)
            theta = theta_next
            grad_v = s.gradient(v)
        x = x_new
    return x, max_iter, L


def solve(
    sub: ConvexSubproblem,
    tol: float = SUBSOLVER_TOL,
    max_iter: int = SUBSOLVER_MAX_INNER,
    warm_start: Optional[np.ndarray] = None,
    warm_duals: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    max_outer: int = SUBSOLVER_MAX_OUTER,
) -> SubproblemSolution:
    """
    Solve the subproblem to KKT tolerance `tol`.

    Args:
        sub: Subproblem built from convex surrogates
        tol: Bound on all three KKT residuals
        max_iter: Inner iteration budget per outer step
        warm_start: Initial primal point; the anchor when omitted
        warm_duals: Initial (lam, nu); ignored when the sizes differ
        max_outer: Multiplier updates allowed

    Returns:
        SubproblemSolution; `converged` is False when the budget ran out

    Raises:
        SubproblemInfeasibleError: If the penalty hit its cap and the
            iterate is still clearly infeasible
    """
    if not tol > 0:
        raise InvalidInputError(f"tolerance must be positive, got {tol}")
    n_g, n_h = sub.n_g, sub.n_h
    x = sub.anchor.copy() if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    if x.shape != sub.anchor.shape:
        raise InvalidInputError(f"warm start has shape {x.shape}, expected {sub.anchor.shape}")

    y = np.zeros(n_g + n_h)
    if warm_duals is not None:
        lam0, nu0 = (np.asarray(a, dtype=float) for a in warm_duals)
        if lam0.size == n_g and nu0.size == n_h:
            y = np.maximum(0.0, np.concatenate([lam0, nu0]))
        else:
            logger.debug("Warm duals ignored: size mismatch")

    rho = SUBSOLVER_PENALTY_INIT
    lipschitz = max(sub.objective.smoothness, 1e-12)
    prev_violation = math.inf
    c0 = sub.constraint_values(x)
    accuracy_ref = float(max(0.0, c0.max())) if c0.size else 0.0
    total_inner = 0
    best: Optional[SubproblemSolution] = None

    for outer in range(1, max_outer + 1):
        inner_tol = max(0.5 * tol, min(1e-2, 0.1 * accuracy_ref))
        s = _AugmentedLagrangian(sub, y, rho)
        x, inner, lipschitz = _proximal_gradient(
            s, sub.regularizer, x, max(sub.objective.smoothness, 0.5 * lipschitz), inner_tol, max_iter
        )
        total_inner += inner

        c = sub.constraint_values(x)
        y_next = np.maximum(0.0, y + rho * c) if c.size else y
        lam, nu = y_next[:n_g], y_next[n_g:]
        residuals, v = _residuals_with_subgradient(sub, x, lam, nu)
        candidate = SubproblemSolution(
            x=x.copy(), lam=lam.copy(), nu=nu.copy(), residuals=residuals,
            iterations=total_inner, outer_iterations=outer, converged=residuals.within(tol), subgradient=v,
        )
        if best is None or _worst(residuals) <= _worst(best.residuals):
            best = candidate
        if candidate.converged:
            return candidate

        violation = float(max(0.0, c.max())) if c.size else 0.0
        if violation > 0.25 * prev_violation:
            rho = min(rho * SUBSOLVER_PENALTY_GROWTH, SUBSOLVER_PENALTY_MAX)
        logger.debug(f"outer {outer}: violation={violation:.3e} rho={rho:.1e} residuals={residuals}")
        prev_violation = violation
        accuracy_ref = violation
        y = y_next

    if best.residuals.primal_violation > SUBSOLVER_INFEASIBLE_TOL and rho >= SUBSOLVER_PENALTY_MAX:
        raise SubproblemInfeasibleError(
            f"constraint violation {best.residuals.primal_violation:.3e} persists at penalty {rho:.1e}"
        )
    logger.warning(f"Subproblem not converged after {max_outer} outer steps: {best.residuals}")
    return SubproblemSolution(
        x=best.x, lam=best.lam, nu=best.nu, residuals=best.residuals,
        iterations=total_inner, outer_iterations=max_outer, converged=False, subgradient=best.subgradient,
    )


def _worst(res: SubproblemResiduals) -> float:
    return max(res.stationarity, res.primal_violation, res.complementarity)
