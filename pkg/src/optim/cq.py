# src/optim/cq.py
"""
Constraint-qualification and optimality diagnostics.

- estimate_rho: margin of a common descent direction for near-active rows (LP)
- slater_margin: strict feasibility of the shifted point x_t + (rho/L) d for the subproblem
- dual_bound: 2 B_U L / rho^2
- kkt_report: stationarity and complementarity of a candidate point
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.optimize import linprog

from src.config import EQUALITY_TOL
from src.core.exceptions import InvalidInputError, MetadataRequiredError
from src.core.problem import (
    StochasticProblem,
    feasibility_violation,
    monte_carlo_gradient,
    select_subgradient,
)
from src.models.schemas import CheckStatus, KKTReport, SmoothnessMeta, ValidationCheck, ValidationReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MFCQParams:
    """
    Strong MFCQ estimate at one point.

    rho is +inf when no row is within omega of activity; the direction is
    then None.
    """

    omega: float
    rho: float
    direction: Optional[np.ndarray]
    active_g: Tuple[int, ...] = ()
    active_h: Tuple[int, ...] = ()

    @property
    def has_active(self) -> bool:
        return bool(self.active_g or self.active_h)

    def normalized(self) -> "MFCQParams":
        """Rescale to ||d||_2 = 1; the margin scales with it."""
        if self.direction is None:
            return self
        norm = float(np.linalg.norm(self.direction))
        if norm == 0.0:
            return self
        return replace(self, rho=self.rho / norm, direction=self.direction / norm)


def default_omega(problem: StochasticProblem, x_strict) -> float:
    """
    omega = -max(g(x~), h(x~)) at a strictly feasible x~. Equality rows are
    left out.

    Raises:
        InvalidInputError: If x~ is not strictly feasible
    """
    x_strict = problem.check_point(x_strict)
    h_vals = problem.convex_values(x_strict)[~problem.convex_equality_mask()]
    values = np.concatenate([problem.nonconvex_values(x_strict), h_vals])
    if values.size == 0:
        return math.inf
    worst = float(values.max())
    if worst >= 0:
        raise InvalidInputError(f"point is not strictly feasible (max constraint {worst:.3e})")
    return -worst


def estimate_rho(problem: StochasticProblem, x, omega: float, norm_cap: float = 1.0) -> MFCQParams:
    """
    Solve max rho s.t. <grad c_k(x), d> <= -rho over rows with c_k(x) >= -omega,
    with the box ||d||_inf <= norm_cap.

    Rows of equality blocks always bind: they enter as <grad r_k(x), d> = 0
    and carry no margin.

    A second LP fixes rho and minimizes ||d||_1 so the direction is unique.
    The reported rho is the margin actually achieved by the returned d.
    """
    if omega < 0:
        raise InvalidInputError(f"omega must be nonnegative, got {omega}")
    if not norm_cap > 0:
        raise InvalidInputError(f"norm cap must be positive, got {norm_cap}")
    x = problem.check_point(x)
    n = problem.dimension

    g_vals, h_vals = problem.nonconvex_values(x), problem.convex_values(x)
    equality = problem.convex_equality_mask()
    active_g = tuple(int(k) for k in np.flatnonzero(g_vals >= -omega))
    active_h = tuple(int(k) for k in np.flatnonzero((h_vals >= -omega) & ~equality))
    if not active_g and not active_h:
        return MFCQParams(omega=omega, rho=math.inf, direction=None)

    rows = []
    if active_g:
        rows.append(problem.nonconvex_jacobian(x)[list(active_g)])
    if active_h:
        rows.append(problem.convex_jacobian(x)[list(active_h)])
    A = np.vstack(rows)
    m = A.shape[0]
    E = problem.convex_jacobian(x)[equality] if equality.any() else np.zeros((0, n))
    k = E.shape[0]

    # stage 1: variables (d, rho), maximize rho
    stage1 = linprog(
        c=np.concatenate([np.zeros(n), [-1.0]]),
        A_ub=np.hstack([A, np.ones((m, 1))]),
        b_ub=np.zeros(m),
        A_eq=np.hstack([E, np.zeros((k, 1))]) if k else None,
        b_eq=np.zeros(k) if k else None,
        bounds=[(-norm_cap, norm_cap)] * n + [(0.0, None)],
        method="highs",
    )
    if stage1.status != 0:
        logger.warning(f"MFCQ stage-1 LP ended with status {stage1.status}: {stage1.message}")
        return MFCQParams(omega=omega, rho=0.0, direction=np.zeros(n), active_g=active_g, active_h=active_h)
    rho_star = max(0.0, float(stage1.x[-1]))

    # stage 2: variables (d, s), minimize sum s with |d| <= s, A d <= -rho*
    target = rho_star * (1.0 - 1e-9)
    eye = np.eye(n)
    stage2 = linprog(
        c=np.concatenate([np.zeros(n), np.ones(n)]),
        A_ub=np.vstack([
            np.hstack([A, np.zeros((m, n))]),
            np.hstack([eye, -eye]),
            np.hstack([-eye, -eye]),
        ]),
        b_ub=np.concatenate([np.full(m, -target), np.zeros(2 * n)]),
        A_eq=np.hstack([E, np.zeros((k, n))]) if k else None,
        b_eq=np.zeros(k) if k else None,
        bounds=[(-norm_cap, norm_cap)] * n + [(0.0, norm_cap)] * n,
        method="highs",
    )
    d = stage2.x[:n] if stage2.status == 0 else stage1.x[:n]
    achieved = float(np.min(-(A @ d)))
    return MFCQParams(
        omega=omega,
        rho=max(0.0, achieved),
        direction=np.asarray(d, dtype=float),
        active_g=active_g,
        active_h=active_h,
    )


def slater_margin(
    problem: StochasticProblem,
    x_t,
    surrogates: Sequence,
    mfcq: MFCQParams,
    meta: SmoothnessMeta,
) -> ValidationReport:
    """
    Shift to x_t + (rho/L) d and check every surrogate row and every convex row
    against -rho^2 / (2L); equality rows only need to stay within
    EQUALITY_TOL. Also check omega >= (rho/L)(G + rho/2).

    Raises:
        MetadataRequiredError: If L is unknown
        InvalidInputError: If rho is not finite or d is missing
    """
    (L,) = meta.require("L", operation="slater_margin")
    if not math.isfinite(mfcq.rho) or mfcq.direction is None:
        raise InvalidInputError("slater margin needs a finite rho and a direction")
    params = mfcq.normalized()
    x_t = problem.check_point(x_t)
    shifted = x_t + (params.rho / L) * params.direction
    threshold = -params.rho ** 2 / (2.0 * L)

    report = ValidationReport(subject="slater margin")
    for sur in surrogates:
        values = np.atleast_1d(np.asarray(sur.value(shifted), dtype=float))
        for label, val in zip(sur.labels(), values):
            report.checks.append(_margin_check(f"g~ {label}", val, threshold))
    for block in problem.convex:
        values = np.atleast_1d(np.asarray(block.value(shifted), dtype=float))
        for label, val in zip(block.labels(), values):
            if block.equality:
                report.checks.append(_margin_check(f"h {label} (equality)", val, EQUALITY_TOL))
            else:
                report.checks.append(_margin_check(f"h {label}", val, threshold))

    if meta.G is None:
        report.checks.append(ValidationCheck(
            name="omega >= (rho/L)(G + rho/2)",
            status=CheckStatus.SKIPPED,
            message="metadata required: G",
        ))
    else:
        needed = params.rho / L * (meta.G + params.rho / 2.0)
        report.checks.append(ValidationCheck(
            name="omega >= (rho/L)(G + rho/2)",
            status=CheckStatus.PASS if params.omega >= needed else CheckStatus.FAIL,
            value=params.omega,
            threshold=needed,
        ))
    return report


def _margin_check(name: str, value: float, threshold: float) -> ValidationCheck:
    ok = value <= threshold + 1e-12 * max(1.0, abs(threshold))
    return ValidationCheck(
        name=name,
        status=CheckStatus.PASS if ok else CheckStatus.FAIL,
        value=float(value),
        threshold=float(threshold),
    )


def dual_bound(B_U: Optional[float], L: Optional[float], rho: Optional[float]) -> float:
    """
    2 B_U L / rho^2; 0 when rho is infinite (no near-active constraint).

    Raises:
        MetadataRequiredError: If any input is unknown
    """
    missing = [name for name, v in (("B_U", B_U), ("L", L), ("rho", rho)) if v is None]
    if missing:
        raise MetadataRequiredError(missing, "dual_bound")
    if B_U <= 0 or L <= 0 or rho <= 0:
        raise InvalidInputError(f"dual bound needs positive inputs, got B_U={B_U}, L={L}, rho={rho}")
    if math.isinf(rho):
        return 0.0
    return 2.0 * B_U * L / rho ** 2


def kkt_report(
    problem: StochasticProblem,
    x,
    lam,
    nu,
    mc_samples: int,
    rng: np.random.Generator,
    exact: bool = False,
) -> KKTReport:
    """
    KKT quantities of (x, lam, nu) for the original problem.

    grad U is averaged over mc_samples fresh samples, or taken from the exact
    oracle when `exact` is set. The subgradient v of u is chosen to minimize
    the stationarity norm.

    Raises:
        InvalidInputError: On dimension mismatch or negative duals
    """
    x = problem.check_point(x)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    if lam.size != problem.n_nonconvex or nu.size != problem.n_convex:
        raise InvalidInputError(
            f"dual sizes ({lam.size}, {nu.size}) do not match constraints "
            f"({problem.n_nonconvex}, {problem.n_convex})"
        )
    if (lam < 0).any() or (nu < 0).any():
        raise InvalidInputError("duals must be nonnegative")

    if exact:
        if problem.expected_gradient is None:
            raise InvalidInputError(f"problem '{problem.name}' has no exact gradient")
        grad_U = np.asarray(problem.expected_gradient(x), dtype=float)
        samples = 0
    else:
        grad_U = monte_carlo_gradient(problem, x, mc_samples, rng)
        samples = mc_samples

    smooth = grad_U.copy()
    g_vals = problem.nonconvex_values(x)
    h_vals = problem.convex_values(x)
    if lam.size:
        smooth += problem.nonconvex_jacobian(x).T @ lam
    if nu.size:
        smooth += problem.convex_jacobian(x).T @ nu
    v = select_subgradient(problem.regularizer, x, smooth)

    return KKTReport(
        stationarity=float(np.linalg.norm(smooth + v)),
        complementarity_g=float(lam @ g_vals) if lam.size else 0.0,
        complementarity_h=float(nu @ h_vals) if nu.size else 0.0,
        feasibility=feasibility_violation(problem, x),
        samples=samples,
        exact_gradient=exact,
        subgradient=v.tolist(),
    )
