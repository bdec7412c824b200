# src/evaluation/validators.py
"""
Validator suite behind the `validate` command.

Checks the configured problem's surrogates (tangent match, majorization,
strong convexity), the schedule parameters, and the Slater margin of the
first subproblem.
"""

from typing import List, Optional
import logging

import numpy as np

from src.core.exceptions import InvalidInputError, MetadataRequiredError, SurrogateUndefinedError
from src.core.problem import StochasticProblem
from src.evaluation import experiment
from src.models.schemas import (
    CheckStatus,
    ExperimentConfig,
    SmoothnessMeta,
    ValidateConfig,
    ValidationCheck,
    ValidationReport,
)
from src.optim import cq, schedule
from src.optim.surrogate import (
    build_proximal_surrogate,
    validate_majorization,
    validate_strong_convexity,
    validate_tangent_match,
)

logger = logging.getLogger(__name__)

# majorization samples are drawn from anchor + spread * U[-3, 3]^n
SAMPLE_BOX = 3.0


def _anchors(problem: StochasticProblem, x1: np.ndarray, settings: ValidateConfig, rng: np.random.Generator):
    """x_1 followed by random perturbations of it."""
    anchors = [x1]
    for _ in range(settings.anchors - 1):
        anchors.append(x1 + settings.spread * rng.uniform(-1.0, 1.0, problem.dimension))
    return anchors


def _undefined(subject: str, exc: Exception) -> ValidationReport:
    return ValidationReport(subject=subject, checks=[ValidationCheck(
        name=subject, status=CheckStatus.FAIL, message=f"surrogate undefined: {exc}",
    )])


def tangent_reports(problem, anchors, settings: ValidateConfig, rng) -> List[ValidationReport]:
    reports = []
    for k, anchor in enumerate(anchors):
        xi = problem.sample(rng)
        f_hat = build_proximal_surrogate(anchor, problem.gradient(anchor, xi), problem.value(anchor, xi), 1.0)
        reports.append(validate_tangent_match(
            f_hat, lambda x, xi=xi: problem.gradient(x, xi), anchor, settings.fd_step, name=f"objective@anchor{k}",
        ))
        for block in problem.nonconvex:
            subject = f"{block.name}@anchor{k}"
            try:
                surrogate = block.surrogate(anchor)
            except SurrogateUndefinedError as exc:
                reports.append(_undefined(f"tangent match: {subject}", exc))
                continue
            reports.append(validate_tangent_match(surrogate, block.jacobian, anchor, settings.fd_step, name=subject))
    return reports


def majorization_reports(problem, anchors, settings: ValidateConfig, rng) -> List[ValidationReport]:
    reports = []
    for k, anchor in enumerate(anchors):
        sampler = lambda r, a=anchor: a + settings.spread * r.uniform(-SAMPLE_BOX, SAMPLE_BOX, a.size)
        for block in problem.nonconvex:
            subject = f"{block.name}@anchor{k}"
            try:
                surrogate = block.surrogate(anchor)
            except SurrogateUndefinedError as exc:
                reports.append(_undefined(f"majorization: {subject}", exc))
                continue
            reports.append(validate_majorization(surrogate, block.value, sampler, settings.samples, rng, name=subject))
    return reports


def strong_convexity_reports(problem, anchors, settings: ValidateConfig, mu: float, rng) -> List[ValidationReport]:
    reports = []
    for k, anchor in enumerate(anchors):
        xi = problem.sample(rng)
        f_hat = build_proximal_surrogate(anchor, problem.gradient(anchor, xi), problem.value(anchor, xi), mu)
        reports.append(validate_strong_convexity(
            f_hat, mu, settings.samples, rng, scale=settings.spread, name=f"objective@anchor{k}",
        ))
    return reports


def slater_report(problem: StochasticProblem, x1: np.ndarray, meta: SmoothnessMeta, omega: Optional[float]) -> ValidationReport:
    """MFCQ margin at x_1, then the Slater margin of the first subproblem."""
    subject = "slater margin"
    if omega is None:
        try:
            omega = cq.default_omega(problem, x1)
        except InvalidInputError as exc:
            return ValidationReport(subject=subject, checks=[ValidationCheck(
                name="omega from a strictly feasible x_1", status=CheckStatus.SKIPPED, message=str(exc),
            )])
    mfcq = cq.estimate_rho(problem, x1, omega)
    if not mfcq.has_active:
        return ValidationReport(subject=subject, checks=[ValidationCheck(
            name="near-active constraints", status=CheckStatus.SKIPPED,
            message=f"no constraint within omega={omega:g} of activity",
        )])
    try:
        surrogates = [block.surrogate(x1) for block in problem.nonconvex]
        return cq.slater_margin(problem, x1, surrogates, mfcq, meta)
    except MetadataRequiredError as exc:
        return ValidationReport(subject=subject, checks=[ValidationCheck(
            name="slater margin", status=CheckStatus.SKIPPED, message=str(exc),
        )])
    except InvalidInputError as exc:
        return ValidationReport(subject=subject, checks=[ValidationCheck(
            name="slater margin", status=CheckStatus.FAIL, message=str(exc),
        )])


def run_validation(config: ExperimentConfig) -> List[ValidationReport]:
    """
    Run the configured validators on the configured problem.

    Returns:
        One report per validator and subject; empty when no validator is listed
    """
    settings = config.validation
    if not settings.validators:
        logger.warning("No validators configured: nothing validated")
        return []

    bundle = experiment.build_problem(config)
    problem = bundle.problem
    meta = experiment.effective_meta(bundle, config)
    rng = np.random.default_rng(config.run.seed)

    x1 = problem.check_point(
        config.run.initial_point if config.run.initial_point is not None else problem.initial_point
    )
    anchors = _anchors(problem, x1, settings, rng)

    reports: List[ValidationReport] = []
    for name in settings.validators:
        logger.info(f"Running validator '{name}' on '{problem.name}'")
        if name == "tangent_match":
            reports.extend(tangent_reports(problem, anchors, settings, rng))
        elif name == "majorization":
            reports.extend(majorization_reports(problem, anchors, settings, rng))
        elif name == "strong_convexity":
            reports.extend(strong_convexity_reports(problem, anchors, settings, config.run.mu, rng))
        elif name == "parameters":
            run = config.run
            reports.append(schedule.validate_params(meta, run.k_bar, run.w, run.c, run.mu))
        elif name == "slater":
            reports.append(slater_report(problem, x1, meta, settings.omega))

    for report in reports:
        for check in report.failures:
            logger.error(f"FAIL {report.subject} / {check.name}: value={check.value} threshold={check.threshold} {check.message}")
    return reports
