# src/evaluation/monitors.py
"""
Runtime monitors evaluated on finished traces.

Each monitor returns a MonitorReport and never raises for a violated
inequality: a violation is a finding about the run (or about an estimated
constant), not a library error.

- feasibility:  every iterate satisfies the original constraints
- descent:      deterministic per-step decrease of F
- dual bound:   recorded dual norms stay below 2 B_U L / rho^2
- tracking:     multi-seed mean tracking error shrinks over dyadic windows
- warm start:   warm-started solves need no more inner iterations than cold ones
"""

from typing import List, Optional, Sequence
import logging
import math

import numpy as np

from src.core.exceptions import InvalidInputError, SubproblemInfeasibleError, SurrogateUndefinedError
from src.core.problem import StochasticProblem, feasibility_violation, monte_carlo_gradient
from src.models.schemas import CheckStatus, MonitorReport, RunConfig
from src.optim import cq, subsolver
from src.optim.costa import RunTrace
from src.optim.surrogate import build_proximal_surrogate, build_running_surrogate

logger = logging.getLogger(__name__)

DESCENT_TOL = 1e-8


def feasibility_monitor(problem: StochasticProblem, trace: RunTrace, tol: float) -> MonitorReport:
    """Worst constraint violation over all iterates, x_1 included."""
    if not trace.iterates:
        return MonitorReport(name="feasibility", status=CheckStatus.SKIPPED, message="empty trace")
    violations = [feasibility_violation(problem, x) for x in trace.iterates]
    worst = max(violations)
    bad = sum(v > tol for v in violations)
    return MonitorReport(
        name="feasibility",
        status=CheckStatus.PASS if bad == 0 else CheckStatus.FAIL,
        value=worst,
        threshold=tol,
        violations=bad,
        message="" if bad == 0 else f"{bad} iterate(s) above tolerance",
    )


def descent_monitor(trace: RunTrace, L: Optional[float] = None, tol: float = DESCENT_TOL) -> MonitorReport:
    """
    F(x_{t+1}) - F(x_t) <= eta_t ||e_t||^2 / 2 - eta_t ||delta_t||^2 / 4 + tol.

    Needs exact objectives and tracking errors, so only deterministic runs
    are checked. With L known, steps where mu < L eta_t / 2 + 3/4 are left
    out and counted in the message.
    """
    config = trace.config
    if not config.deterministic:
        return MonitorReport(name="descent", status=CheckStatus.SKIPPED, message="stochastic run")
    if not trace.records:
        return MonitorReport(name="descent", status=CheckStatus.SKIPPED, message="empty trace")

    previous = trace.initial_objective
    worst_excess = -math.inf
    bad, skipped = 0, 0
    for record in trace.records:
        current = record.objective_est
        if L is not None and config.mu < L * record.eta / 2.0 + 0.75:
            skipped += 1
        elif record.tracking_err is not None:
            allowed = record.eta * record.tracking_err ** 2 / 2.0 - record.eta * record.delta_norm ** 2 / 4.0
            excess = (current - previous) - allowed
            worst_excess = max(worst_excess, excess)
            if excess > tol:
                bad += 1
        previous = current

    if worst_excess == -math.inf:
        return MonitorReport(
            name="descent", status=CheckStatus.SKIPPED,
            message=f"no step met the modulus condition ({skipped} skipped)",
        )
    message = f"{skipped} step(s) skipped by the modulus condition" if skipped else ""
    if bad:
        message = f"{bad} step(s) exceed the bound. {message}".strip()
    return MonitorReport(
        name="descent",
        status=CheckStatus.PASS if bad == 0 else CheckStatus.FAIL,
        value=worst_excess,
        threshold=tol,
        violations=bad,
        message=message,
    )


def dual_bound_monitor(
    problem: StochasticProblem,
    trace: RunTrace,
    L: Optional[float],
    omega: Optional[float] = None,
    samples: int = 10,
) -> MonitorReport:
    """
    Compare max_t ||lam_t||_1 + ||nu_t||_1 with 2 B_U L / rho^2, where B_U is
    the observed surrogate range and rho the smallest MFCQ margin over
    `samples` evenly spaced iterates.

    A violation is reported as an estimation failure.
    """
    name = "dual_bound"
    if not trace.records:
        return MonitorReport(name=name, status=CheckStatus.SKIPPED, message="empty trace")
    if L is None:
        return MonitorReport(name=name, status=CheckStatus.SKIPPED, message="metadata required: L")
    if trace.empirical_B_U <= 0:
        return MonitorReport(name=name, status=CheckStatus.SKIPPED, message="observed surrogate range is zero")

    if omega is None:
        try:
            omega = cq.default_omega(problem, trace.iterates[0])
        except InvalidInputError:
            omega = 0.0
    picks = np.unique(np.linspace(0, len(trace.iterates) - 1, num=max(1, samples)).round().astype(int))
    rhos = []
    for k in picks:
        params = cq.estimate_rho(problem, trace.iterates[k], omega).normalized()
        if math.isfinite(params.rho):
            rhos.append(params.rho)
    dual_norms = np.array([r.dual_norm_l1 for r in trace.records])
    if not rhos:
        return MonitorReport(
            name=name, status=CheckStatus.SKIPPED, value=float(dual_norms.max()),
            message="no near-active constraint at the sampled iterates",
        )
    rho = min(rhos)
    if rho <= 0:
        return MonitorReport(
            name=name, status=CheckStatus.FAIL, value=float(dual_norms.max()),
            message="estimation failure: MFCQ margin is zero at a sampled iterate",
        )

    bound = cq.dual_bound(trace.empirical_B_U, L, rho)
    bad = int((dual_norms > bound).sum())
    return MonitorReport(
        name=name,
        status=CheckStatus.PASS if bad == 0 else CheckStatus.FAIL,
        value=float(dual_norms.max()),
        threshold=bound,
        violations=bad,
        message=(
            f"B_U~={trace.empirical_B_U:.4g}, rho~={rho:.4g}, omega={omega:.4g}"
            + ("" if bad == 0 else "; estimation failure")
        ),
    )


def dyadic_window_means(errors: Sequence[Sequence[Optional[float]]]) -> List[float]:
    """
    Seed-averaged tracking error over windows t in [2^k, 2^{k+1}).

    Args:
        errors: One sequence per seed, entry t-1 for iteration t

    Raises:
        InvalidInputError: If no seed has any recorded error
    """
    rows = [np.array([np.nan if e is None else e for e in seq], dtype=float) for seq in errors]
    if not rows or all(np.isnan(r).all() for r in rows):
        raise InvalidInputError("no tracking errors recorded")
    length = min(len(r) for r in rows)
    stacked = np.vstack([r[:length] for r in rows])
    per_t = np.nanmean(stacked, axis=0)

    means = []
    start = 1
    while start <= length:
        stop = min(2 * start, length + 1)
        window = per_t[start - 1:stop - 1]
        if not np.isnan(window).all():
            means.append(float(np.nanmean(window)))
        start *= 2
    return means


def tracking_monitor(traces: Sequence[RunTrace], slack: float = 0.0) -> MonitorReport:
    """Window means must be nonincreasing up to a relative slack."""
    return tracking_report([[r.tracking_err for r in tr.records] for tr in traces], slack)


def tracking_report(errors: Sequence[Sequence[Optional[float]]], slack: float = 0.0) -> MonitorReport:
    """Same check on raw per-seed error sequences, e.g. read back from trace files."""
    name = "tracking"
    try:
        means = dyadic_window_means(errors)
    except InvalidInputError as exc:
        return MonitorReport(name=name, status=CheckStatus.SKIPPED, message=str(exc))
    increases = [
        k for k in range(1, len(means))
        if means[k] > means[k - 1] * (1.0 + slack) + 1e-15
    ]
    return MonitorReport(
        name=name,
        status=CheckStatus.PASS if not increases else CheckStatus.FAIL,
        value=means[-1],
        threshold=means[0],
        violations=len(increases),
        message=f"window means {', '.join(f'{m:.3g}' for m in means)}",
    )


def warm_start_monitor(
    problem: StochasticProblem,
    trace: RunTrace,
    samples: int = 3,
    rng: Optional[np.random.Generator] = None,
) -> MonitorReport:
    """
    Re-solve representative subproblems at recorded iterates, warm (from
    x_t and the previous duals) and cold (from the origin with zero duals),
    and compare mean inner iteration counts.

    The subproblems use the exact gradient when available, otherwise a
    Monte-Carlo average, so they are representative rather than identical to
    the ones solved during the run.
    """
    name = "warm_start"
    config: RunConfig = trace.config
    if len(trace.records) < 2:
        return MonitorReport(name=name, status=CheckStatus.SKIPPED, message="trace too short")
    rng = rng or np.random.default_rng(config.seed)
    picks = np.unique(np.linspace(1, len(trace.records) - 1, num=max(1, samples)).round().astype(int))

    warm_counts, cold_counts = [], []
    for k in picks:
        x = trace.iterates[k]
        if problem.has_expectation:
            grad = np.asarray(problem.expected_gradient(x), dtype=float)
            value = float(problem.expected_value(x))
        else:
            grad = monte_carlo_gradient(problem, x, config.mc_samples, rng)
            value = 0.0
        f_tilde = build_running_surrogate(build_proximal_surrogate(x, grad, value, config.mu), grad)
        sub = subsolver.build_subproblem(
            f_tilde, problem.regularizer, [b.surrogate(x) for b in problem.nonconvex], problem.convex
        )
        duals = trace.duals[k - 1] if k - 1 < len(trace.duals) else None
        kwargs = dict(tol=config.subsolver_tol, max_iter=config.subsolver_max_iter, max_outer=config.subsolver_max_outer)
        try:
            warm = subsolver.solve(sub, warm_start=x, warm_duals=duals, **kwargs)
            cold = subsolver.solve(sub, warm_start=np.zeros(problem.dimension), **kwargs)
        except (SubproblemInfeasibleError, SurrogateUndefinedError) as exc:
            logger.warning(f"Warm-start check at t={k + 1} failed: {exc}")
            continue
        warm_counts.append(warm.iterations)
        cold_counts.append(cold.iterations)

    if not warm_counts:
        return MonitorReport(name=name, status=CheckStatus.SKIPPED, message="no warm-start check solved")
    warm_mean, cold_mean = float(np.mean(warm_counts)), float(np.mean(cold_counts))
    return MonitorReport(
        name=name,
        status=CheckStatus.PASS if warm_mean <= cold_mean else CheckStatus.FAIL,
        value=warm_mean,
        threshold=cold_mean,
        message=f"mean inner iterations warm {warm_mean:.1f} vs cold {cold_mean:.1f} over {len(warm_counts)} check(s)",
    )


def run_monitors(
    problem: StochasticProblem,
    trace: RunTrace,
    L: Optional[float],
    omega: Optional[float] = None,
) -> List[MonitorReport]:
    """
    Single-trace monitors attached to every run summary. The tracking monitor
    joins them when the run records tracking errors (exact oracles or held-out
    samples).
    """
    config = trace.config
    tol = max(config.subsolver_tol, config.feasibility_tol)
    reports = [
        feasibility_monitor(problem, trace, tol),
        descent_monitor(trace, L),
        dual_bound_monitor(problem, trace, L, omega),
        warm_start_monitor(problem, trace),
    ]
    if config.deterministic or config.tracking_samples > 0:
        reports.append(tracking_monitor([trace]))
    for report in reports:
        if report.status == CheckStatus.FAIL:
            logger.warning(f"Monitor '{report.name}' flagged the run: {report.message}")
    return reports
