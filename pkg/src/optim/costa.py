# src/optim/costa.py
"""
Driver for constrained stochastic SCA with STORM gradient tracking, the
classical-tracking baseline, and the derived rate quantities.

Iteration t, in this order:
    1. draw xi_t, evaluate grad f(x_t, xi_t) and grad f(x_{t-1}, xi_t)
    2. z_{t+1} = storm_update(z_t, ...)
    3. eta_t from the accumulated G_t^2, beta_{t+1} = c eta_t^2
    4. build f_tilde and g_tilde at x_t, solve the subproblem
    5. x_{t+1} = (1 - eta_t) x_t + eta_t x_hat_t
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd

from src.core.exceptions import (
    InvalidConfigError,
    InvalidInputError,
    RunAbortedError,
    SubproblemInfeasibleError,
    SurrogateUndefinedError,
)
from src.core.problem import (
    StochasticProblem,
    estimate_expected_objective,
    feasibility_violation,
    monte_carlo_gradient,
)
from src.models.schemas import IterationRecord, KKTReport, RateCertificate, RunConfig, SmoothnessMeta
from src.optim import cq, schedule, subsolver
from src.optim.surrogate import build_proximal_surrogate, build_running_surrogate
from src.utils.numerics import spawn_streams

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "t", "eta", "beta", "delta_norm", "feasibility", "dual_norm_l1", "objective_est", "tracking_err_or_blank",
]


@dataclass
class RunTrace:
    """Per-iteration records plus the arrays needed by monitors and reports."""

    method: str
    config: RunConfig
    records: List[IterationRecord] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)
    solutions: List[np.ndarray] = field(default_factory=list)
    duals: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    kkt_reports: List[KKTReport] = field(default_factory=list)
    initial_objective: float = math.nan
    empirical_B_U: float = 0.0
    unconverged_solves: int = 0
    aborted: bool = False
    abort_reason: Optional[str] = None
    average_progress: Optional[float] = None
    best_kkt_index: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_point(self) -> np.ndarray:
        return self.iterates[-1]

    def best_kkt_report(self) -> Optional[KKTReport]:
        if self.best_kkt_index is None:
            return None
        for report in self.kkt_reports:
            if report.t == self.best_kkt_index:
                return report
        return None

    def to_frame(self) -> pd.DataFrame:
        """Trace table with the published column set."""
        rows = [
            {
                "t": r.t,
                "eta": r.eta,
                "beta": r.beta,
                "delta_norm": r.delta_norm,
                "feasibility": r.feasibility,
                "dual_norm_l1": r.dual_norm_l1,
                "objective_est": r.objective_est,
                "tracking_err_or_blank": r.tracking_err,
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def _initial_point(problem: StochasticProblem, config: RunConfig) -> np.ndarray:
    if config.initial_point is not None:
        return problem.check_point(config.initial_point).copy()
    if problem.initial_point is not None:
        return problem.check_point(problem.initial_point).copy()
    raise InvalidConfigError(f"no initial point given for problem '{problem.name}'")


def _objective_at(problem: StochasticProblem, x: np.ndarray, config: RunConfig, rng: np.random.Generator) -> float:
    if config.deterministic:
        return float(problem.expected_value(x)) + float(problem.regularizer.value(x))
    return estimate_expected_objective(problem, x, config.mc_samples, rng)


def run_costa(problem: StochasticProblem, config: RunConfig) -> RunTrace:
    """
    Run the STORM-tracked SCA method for config.iterations steps.

    Raises:
        InvalidConfigError: If x_1 is infeasible or deterministic mode lacks exact oracles
        RunAbortedError: If a subproblem or surrogate fails; carries the partial trace
    """
    return _run(problem, config, "costa")


def run_classical_sca(problem: StochasticProblem, config: RunConfig) -> RunTrace:
    """
    Baseline with the averaging rule z_{t+1} = (1 - rho_t) z_t + rho_t grad f(x_t, xi_t),
    rho_t = min(1, tracking_rate / sqrt(t + 1)), and no correction term.
    """
    return _run(problem, config, "classical")


def run_method(problem: StochasticProblem, config: RunConfig) -> RunTrace:
    if config.method == "classical":
        return run_classical_sca(problem, config)
    return run_costa(problem, config)


def _run(problem: StochasticProblem, config: RunConfig, method: str) -> RunTrace:
    x = _initial_point(problem, config)
    violation = feasibility_violation(problem, x)
    if violation > config.feasibility_tol:
        raise InvalidConfigError(f"initial point is infeasible (violation {violation:.3e})")
    if config.deterministic and not problem.has_expectation:
        raise InvalidConfigError(f"problem '{problem.name}' has no exact oracles for deterministic mode")

    algo_rng, report_rng = spawn_streams(config.seed)
    state = schedule.ScheduleState(k_bar=config.k_bar, w=config.w, c=config.c)
    eta_0 = schedule.step_size(state)
    if eta_0 > 1.0:
        logger.warning(
            f"eta_0 = k_bar / w^(1/3) = {eta_0:.4g} exceeds 1: damped steps overshoot the subproblem solution "
            "and iterates may leave the feasible set"
        )
    beta = schedule.initial_momentum(state)

    trace = RunTrace(method=method, config=config)
    trace.iterates.append(x.copy())
    trace.initial_objective = _objective_at(problem, x, config, report_rng)

    logger.info(
        f"Starting {method} on '{problem.name}': n={problem.dimension}, T={config.iterations}, "
        f"seed={config.seed}, deterministic={config.deterministic}"
    )

    x_prev = x.copy()
    z: Optional[np.ndarray] = None
    duals: Optional[Tuple[np.ndarray, np.ndarray]] = None
    calls_gradient = 0
    calls_sample = 0
    clip_warned = False

    for t in range(1, config.iterations + 1):
        if config.deterministic:
            g_t = np.asarray(problem.expected_gradient(x), dtype=float)
            value_t = float(problem.expected_value(x))
        else:
            xi = problem.sample(algo_rng)
            calls_sample += 1
            g_t = np.asarray(problem.gradient(x, xi), dtype=float)
            value_t = float(problem.value(x, xi))
        calls_gradient += 1

        if method == "costa":
            if config.deterministic:
                g_prev = np.asarray(problem.expected_gradient(x_prev), dtype=float)
            else:
                g_prev = np.asarray(problem.gradient(x_prev, xi), dtype=float)
            calls_gradient += 1
            if z is None:
                # z_1 = grad f(x_0, xi_1) with x_0 = x_1
                z = g_prev.copy()
            beta_used = min(max(beta, 0.0), 1.0)
            if beta_used != beta and not clip_warned:
                logger.warning(f"Momentum {beta:.4g} clipped to [0, 1] in the tracking update")
                clip_warned = True
            z_next = schedule.storm_update(z, g_t, g_prev, beta_used)
            recorded_beta = beta
        else:
            rate = min(1.0, config.tracking_rate / math.sqrt(t + 1))
            z_next = g_t.copy() if z is None else (1.0 - rate) * z + rate * g_t
            recorded_beta = rate

        state = schedule.accumulate(state, float(np.linalg.norm(g_t)))
        eta = schedule.step_size(state)
        beta = schedule.momentum(state, eta)

        if method == "costa":
            f_hat = build_proximal_surrogate(x, g_t, value_t, config.mu)
        else:
            f_hat = build_proximal_surrogate(x, z_next, value_t, config.mu)
        f_tilde = build_running_surrogate(f_hat, z_next)

        try:
            surrogates = [block.surrogate(x) for block in problem.nonconvex]
            sub = subsolver.build_subproblem(f_tilde, problem.regularizer, surrogates, problem.convex)
            sol = subsolver.solve(
                sub,
                tol=config.subsolver_tol,
                max_iter=config.subsolver_max_iter,
                warm_start=x,
                warm_duals=duals,
                max_outer=config.subsolver_max_outer,
            )
        except (SubproblemInfeasibleError, SurrogateUndefinedError) as exc:
            trace.aborted = True
            trace.abort_reason = f"iteration {t}: {exc}"
            _finalize(trace)
            logger.error(f"Run aborted at iteration {t}: {exc}")
            raise RunAbortedError(trace.abort_reason, trace) from exc

        if not sol.converged:
            trace.unconverged_solves += 1

        x_hat = sol.x
        delta_norm = float(np.linalg.norm(x_hat - x))
        x_next = (1.0 - eta) * x + eta * x_hat

        u = problem.regularizer.value
        gap = (f_tilde.value(x) + u(x)) - (f_tilde.value(x_hat) + u(x_hat))
        trace.empirical_B_U = max(trace.empirical_B_U, float(gap))

        tracking_err, estimated = None, False
        if config.deterministic:
            tracking_err = float(np.linalg.norm(z_next - problem.expected_gradient(x)))
        elif config.tracking_samples > 0:
            reference = monte_carlo_gradient(problem, x, config.tracking_samples, report_rng)
            tracking_err, estimated = float(np.linalg.norm(z_next - reference)), True

        objective = _objective_at(problem, x_next, config, report_rng)
        feasibility = feasibility_violation(problem, x_next)

        if t % config.kkt_every == 0 or t == config.iterations:
            report = cq.kkt_report(
                problem, x_hat, sol.lam, sol.nu,
                mc_samples=config.mc_samples, rng=report_rng, exact=config.deterministic,
            )
            trace.kkt_reports.append(report.model_copy(update={"t": t}))

        trace.records.append(IterationRecord(
            t=t,
            eta=eta,
            beta=recorded_beta,
            delta_norm=delta_norm,
            feasibility=feasibility,
            dual_norm_l1=sol.dual_norm_l1,
            objective_est=objective,
            tracking_err=tracking_err,
            tracking_err_estimated=estimated,
            oracle_calls_gradient=calls_gradient,
            oracle_calls_sample=calls_sample if not config.deterministic else t,
            subsolver_iterations=sol.iterations,
            subsolver_converged=sol.converged,
            surrogate_gap=float(gap),
        ))
        trace.iterates.append(x_next.copy())
        trace.solutions.append(x_hat.copy())
        trace.duals.append((sol.lam.copy(), sol.nu.copy()))

        if t % config.log_every == 0:
            logger.debug(
                f"t={t} eta={eta:.4g} |delta|={delta_norm:.3e} feas={feasibility:.2e} obj={objective:.6g}"
            )

        x_prev, x, z = x, x_next, z_next
        duals = (sol.lam, sol.nu)

    _finalize(trace)
    logger.info(
        f"Finished {method}: average progress={trace.average_progress:.4e}, "
        f"best KKT index={trace.best_kkt_index}, unconverged solves={trace.unconverged_solves}"
    )
    return trace


def _finalize(trace: RunTrace) -> None:
    if trace.records:
        trace.average_progress = average_progress(trace)
    if trace.kkt_reports:
        trace.best_kkt_index = best_kkt_point(trace.kkt_reports)


def average_progress(trace: RunTrace) -> float:
    """Delta_T = (1/T) sum_t ||delta_t||."""
    if not trace.records:
        raise InvalidInputError("average progress of an empty trace")
    return float(np.mean([r.delta_norm for r in trace.records]))


def rate_bound(
    meta: SmoothnessMeta,
    config: RunConfig,
    T: int,
    rho: Optional[float] = None,
) -> RateCertificate:
    """
    Evaluate the rate certificate for T iterations.

        M_T   = 8 B_1 + sigma^2 w^(1/3) / (L^2 k^2) + (2 c^2 k^2 / L^2) log(T + 2)
        bound = sqrt(M_T (w + T G^2)^(1/3) / T)
        d     = (c - 4 L^2 - G^2 / (6 k^3)) / (2 L^2)

    The tracking bound needs d > 0; the KKT epsilon also needs B_U and the
    MFCQ margin rho.

    Raises:
        MetadataRequiredError: If B_1, sigma, L or G is unknown
    """
    if T < 1:
        raise InvalidInputError(f"T must be at least 1, got {T}")
    B_1, sigma, L, G = meta.require("B_1", "sigma", "L", "G", operation="rate_bound")
    k, c, w = config.k_bar, config.c, config.w

    M_T = 8.0 * B_1 + sigma ** 2 * float(np.cbrt(w)) / (L ** 2 * k ** 2) + (2.0 * c ** 2 * k ** 2 / L ** 2) * schedule.log_factor(T)
    progress_sq = M_T * float(np.cbrt(w + T * G ** 2)) / T
    d = (c - 4.0 * L ** 2 - G ** 2 / (6.0 * k ** 3)) / (2.0 * L ** 2)

    tracking = math.sqrt(progress_sq / d) if d > 0 else None
    kkt_eps, comp = None, None
    if meta.B_U is not None and rho is not None and math.isfinite(rho) and rho > 0 and d > 0:
        factor = (2.0 * L + 4.0 * meta.B_U * L ** 2 / rho ** 2) ** 2 + 1.0 / d
        kkt_eps = factor * 2.0 * progress_sq
        comp = -2.0 * meta.B_U * L ** 2 / rho ** 2 * progress_sq

    return RateCertificate(
        T=T,
        M_T=M_T,
        d=d,
        bound=math.sqrt(progress_sq),
        progress_sq_bound=progress_sq,
        tracking_bound=tracking,
        kkt_epsilon=kkt_eps,
        complementarity_bound=comp,
        inputs={"B_1": B_1, "sigma": sigma, "L": L, "G": G, "k_bar": k, "c": c, "w": w},
    )


def best_kkt_point(reports: Sequence[KKTReport]) -> int:
    """
    Index t minimizing stationarity^2 - min(0, lambda^T g); smallest t on ties.

    Reports without t are numbered by position, starting at 1.
    """
    if not reports:
        raise InvalidInputError("no KKT reports to choose from")
    best_t, best_key = None, math.inf
    for pos, report in enumerate(reports, start=1):
        t = report.t if report.t is not None else pos
        key = report.stationarity ** 2 - min(0.0, report.complementarity_g)
        if key < best_key or (key == best_key and t < best_t):
            best_t, best_key = t, key
    return best_t
