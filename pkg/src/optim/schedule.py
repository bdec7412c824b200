# src/optim/schedule.py
"""
STORM gradient tracking and the adaptive step-size / momentum schedules.

    eta_t       = k_bar / (w + sum_{i<=t} G_i^2)^(1/3)
    beta_{t+1}  = c * eta_t^2
    z_{t+1}     = grad f(x_t, xi_t) + (1 - beta_t) (z_t - grad f(x_{t-1}, xi_t))
"""

from dataclasses import dataclass, replace
import logging
import math

import numpy as np

from src.core.exceptions import InvalidConfigError, InvalidInputError
from src.models.schemas import CheckStatus, SmoothnessMeta, ValidationCheck, ValidationReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleState:
    """Bookkeeping for one run. `accumulate` returns a new state."""

    k_bar: float
    w: float
    c: float
    sum_G2: float = 0.0
    t: int = 0

    def __post_init__(self):
        if not self.k_bar > 0:
            raise InvalidConfigError(f"k_bar must be positive, got {self.k_bar}")
        if not self.w > 0:
            raise InvalidConfigError(f"w must be positive, got {self.w}")
        if not self.c > 0:
            raise InvalidConfigError(f"c must be positive, got {self.c}")
        if self.sum_G2 < 0:
            raise InvalidInputError(f"sum_G2 must be nonnegative, got {self.sum_G2}")


def step_size(state: ScheduleState) -> float:
    """eta_t = k_bar / (w + sum_G2)^(1/3)."""
    return state.k_bar / float(np.cbrt(state.w + state.sum_G2))


def momentum(state: ScheduleState, eta: float) -> float:
    """beta_{t+1} = c * eta_t^2."""
    if eta < 0:
        raise InvalidInputError(f"step size must be nonnegative, got {eta}")
    return state.c * eta * eta


def initial_momentum(state: ScheduleState) -> float:
    """beta_1 = c k_bar^2 / w^(2/3), i.e. momentum at eta_0."""
    return momentum(state, state.k_bar / float(np.cbrt(state.w)))


def accumulate(state: ScheduleState, G: float) -> ScheduleState:
    """Add G_t^2 to the running sum and advance t."""
    if not G >= 0:
        raise InvalidInputError(f"gradient norm must be nonnegative, got {G}")
    return replace(state, sum_G2=state.sum_G2 + G * G, t=state.t + 1)


def storm_update(z, grad_at_xt, grad_at_prev_same_sample, beta: float) -> np.ndarray:
    """
    Recursive momentum estimate.

    Both gradients must come from the SAME sample xi_t.

    Args:
        z: Current estimate z_t
        grad_at_xt: grad f(x_t, xi_t)
        grad_at_prev_same_sample: grad f(x_{t-1}, xi_t)
        beta: Momentum in [0, 1]

    Returns:
        z_{t+1}

    Raises:
        InvalidInputError: On shape mismatch or beta outside [0, 1]
    """
    z = np.asarray(z, dtype=float)
    g_now = np.asarray(grad_at_xt, dtype=float)
    g_prev = np.asarray(grad_at_prev_same_sample, dtype=float)
    if not (z.shape == g_now.shape == g_prev.shape) or z.ndim != 1:
        raise InvalidInputError(f"shape mismatch: z {z.shape}, grads {g_now.shape} and {g_prev.shape}")
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"momentum must lie in [0, 1], got {beta}")
    return g_now + (1.0 - beta) * (z - g_prev)


def _check(name: str, ok: bool, value: float, threshold: float, message: str = "") -> ValidationCheck:
    return ValidationCheck(
        name=name,
        status=CheckStatus.PASS if ok else CheckStatus.FAIL,
        value=float(value),
        threshold=float(threshold),
        message=message,
    )


def _skipped(name: str, missing) -> ValidationCheck:
    return ValidationCheck(
        name=name,
        status=CheckStatus.SKIPPED,
        message=f"metadata required: {', '.join(missing)}",
    )


def validate_params(meta: SmoothnessMeta, k_bar: float, w: float, c: float, mu: float) -> ValidationReport:
    """
    Check the step-size and momentum hypotheses of the convergence analysis.

    Checks whose metadata is unknown are reported as skipped, never as passed.
    Two lower bounds on c appear in the analysis (with and without L in the
    denominator of the G^2 term); the larger one is enforced and the report
    says which.

    Returns:
        ValidationReport with one entry per inequality
    """
    report = ValidationReport(subject="schedule parameters")
    checks = report.checks
    L, G = meta.L, meta.G

    if k_bar <= 0 or w <= 0 or c <= 0 or mu <= 0:
        checks.append(ValidationCheck(
            name="positivity",
            status=CheckStatus.FAIL,
            message=f"k_bar={k_bar}, w={w}, c={c}, mu={mu} must all be positive",
        ))
        return report

    cbrt_w = float(np.cbrt(w))
    checks.append(_check("k_bar <= w^(1/3)", k_bar <= cbrt_w, k_bar, cbrt_w))

    c_upper = cbrt_w * cbrt_w / (4.0 * k_bar ** 2)
    checks.append(_check("c <= w^(2/3) / (4 k_bar^2)", c <= c_upper, c, c_upper))

    if L is None or G is None:
        checks.append(_skipped("c lower bound", [n for n, v in (("L", L), ("G", G)) if v is None]))
    else:
        with_L = 4 * L ** 2 + G ** 2 / (6 * L * k_bar ** 3)
        without_L = 4 * L ** 2 + G ** 2 / (6 * k_bar ** 3)
        threshold = max(with_L, without_L)
        which = "G^2/(6 L k^3)" if with_L >= without_L else "G^2/(6 k^3)"
        checks.append(_check(
            "c > 4 L^2 + G^2 term",
            c > threshold,
            c,
            threshold,
            f"stricter of 4L^2+G^2/(6Lk^3)={with_L:.6g} and 4L^2+G^2/(6k^3)={without_L:.6g} (uses {which})",
        ))

    if 4 * mu - 3 <= 0:
        checks.append(ValidationCheck(
            name="w >= (2 L k_bar / (4 mu - 3))^3",
            status=CheckStatus.FAIL,
            value=float(4 * mu - 3),
            threshold=0.0,
            message="4 mu - 3 <= 0: hypothesis cannot hold for any w",
        ))
    elif L is None:
        checks.append(_skipped("w >= (2 L k_bar / (4 mu - 3))^3", ["L"]))
    else:
        w_min = (2 * L * k_bar / (4 * mu - 3)) ** 3
        checks.append(_check("w >= (2 L k_bar / (4 mu - 3))^3", w >= w_min, w, w_min))

    if G is None:
        checks.append(_skipped("w >= G^2", ["G"]))
    else:
        checks.append(_check("w >= G^2", w >= G ** 2, w, G ** 2))

    beta_1 = c * k_bar ** 2 / (cbrt_w * cbrt_w)
    checks.append(_check("beta_1 <= 1/4", beta_1 <= 0.25, beta_1, 0.25))

    eta_0 = k_bar / cbrt_w
    checks.append(_check("eta_0 <= 1", eta_0 <= 1.0, eta_0, 1.0))

    if L is None:
        checks.append(_skipped("mu >= L eta_0 / 2 + 3/4", ["L"]))
    else:
        mu_min = L * eta_0 / 2 + 0.75
        checks.append(_check("mu >= L eta_0 / 2 + 3/4", mu >= mu_min, mu, mu_min))

    failed = report.failures
    if failed:
        logger.warning(f"Parameter checks failed: {', '.join(c.name for c in failed)}")
    return report


def log_factor(T: int) -> float:
    return math.log(T + 2)
