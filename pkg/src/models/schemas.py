# src/models/schemas.py
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config import (
    FD_STEP,
    LOG_EVERY,
    MC_SAMPLES,
    MCP_LEVEL,
    MCP_SMOOTHING,
    SUBSOLVER_MAX_INNER,
    SUBSOLVER_MAX_OUTER,
    SUBSOLVER_TOL,
    VALIDATION_SAMPLES,
)
from src.core.exceptions import MetadataRequiredError

ProblemKind = Literal["sparse-logistic", "trajectory", "synthetic-quadratic", "exterior-ball"]
Method = Literal["costa", "classical"]
ValidatorName = Literal["tangent_match", "majorization", "strong_convexity", "parameters", "slater"]


# ---------------------------------------------------------------------------
# Problem metadata and parameters
# ---------------------------------------------------------------------------

class SmoothnessMeta(BaseModel):
    """Smoothness constants of a problem. None marks an unknown entry."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    L: Optional[float] = Field(default=None, gt=0, description="Smoothness constant")
    G: Optional[float] = Field(default=None, ge=0, description="Lipschitz constant")
    sigma: Optional[float] = Field(default=None, ge=0, description="Gradient noise standard deviation")
    mu: Optional[float] = Field(default=None, gt=0, description="Surrogate strong-convexity modulus")
    B_U: Optional[float] = Field(default=None, gt=0, description="Surrogate range bound")
    B_1: Optional[float] = Field(default=None, ge=0, description="Initial optimality gap bound")

    def require(self, *names: str, operation: Optional[str] = None) -> Tuple[float, ...]:
        """
        Fetch known entries.

        Raises:
            MetadataRequiredError: If any requested entry is unknown
        """
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MetadataRequiredError(missing, operation)
        return tuple(float(getattr(self, n)) for n in names)

    def merged(self, overrides: "SmoothnessMeta") -> "SmoothnessMeta":
        """Entries set in `overrides` win."""
        known = {k: v for k, v in overrides.model_dump().items() if v is not None}
        return self.model_copy(update=known)


class McpParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lam: float = Field(default=2.0, gt=0, description="Penalty weight")
    theta: float = Field(default=5.0, gt=0, description="Concavity width")
    varrho: float = Field(default=MCP_SMOOTHING, gt=0, description="Smoothing constant for |x|")
    tau: float = Field(default=MCP_LEVEL, ge=0, description="Constraint level: mcp(x) <= tau")


class Environment(BaseModel):
    """Planning environment for the multi-agent trajectory problem."""

    model_config = ConfigDict(extra="forbid")

    starts: List[Tuple[float, float]] = Field(..., min_length=1, description="x_i(0) per agent")
    goals: List[Tuple[float, float]] = Field(..., min_length=1, description="Goal per agent")
    horizon: int = Field(..., ge=1, description="Number of waypoints T after the start")
    dt: float = Field(..., gt=0, description="Seconds between waypoints")
    obstacle_center: Tuple[float, float] = (0.0, 0.0)
    obstacle_radius: float = Field(..., gt=0)
    agent_radius: float = Field(..., gt=0)
    v_max: List[float] = Field(..., description="Speed cap per agent")
    omega: float = Field(default=0.8, ge=0, description="Currents scale")
    sigma: float = Field(default=0.0, ge=0, description="Ensemble noise standard deviation")
    delta_current_max: Optional[float] = Field(
        default=None, ge=0, description="Support bound of the current noise; derived when omitted"
    )

    @field_validator("v_max", mode="before")
    @classmethod
    def _broadcast_speed(cls, value):
        if isinstance(value, (int, float)):
            return [float(value)]
        return value

    @model_validator(mode="after")
    def _check_agents(self):
        if len(self.starts) != len(self.goals):
            raise ValueError("starts and goals must list the same agents")
        if len(self.v_max) == 1 and self.n_agents > 1:
            self.v_max = self.v_max * self.n_agents
        if len(self.v_max) != self.n_agents:
            raise ValueError("v_max needs one entry or one per agent")
        if any(v <= 0 for v in self.v_max):
            raise ValueError("v_max entries must be positive")
        return self

    @property
    def n_agents(self) -> int:
        return len(self.starts)


class QuadraticParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dimension: int = Field(default=10, ge=1)
    sigma: float = Field(default=1.0, ge=0, description="Noise level of the linear perturbation")
    center: Optional[List[float]] = Field(default=None, description="Minimizer b; defaults to all ones")
    radius: Optional[float] = Field(default=None, gt=0, description="Optional ball constraint ||x|| <= radius")


class ExteriorBallParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target: Tuple[float, float] = (0.2, 0.0)
    radius: float = Field(default=1.0, gt=0)


class SyntheticDatasetParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(default=400, ge=2)
    features: int = Field(default=50, ge=1)
    informative: int = Field(default=5, ge=1)
    seed: int = 0


class SparseLogisticParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset_path: Optional[str] = Field(default=None, description="LIBSVM training file")
    test_path: Optional[str] = Field(default=None, description="LIBSVM test file; split from train when omitted")
    label_rule: str = Field(default="sign", description="'sign', 'pm1' or 'digit:<d>'")
    n_features: Optional[int] = Field(default=None, ge=1)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    split_seed: int = 0
    batch_size: int = Field(default=1, ge=1)
    smoothed: bool = True
    mcp: McpParams = Field(default_factory=McpParams)
    synthetic: SyntheticDatasetParams = Field(default_factory=SyntheticDatasetParams)

    @model_validator(mode="after")
    def _paths_exist(self):
        for path in (self.dataset_path, self.test_path):
            if path is not None and not Path(path).exists():
                raise ValueError(f"dataset file not found: {path}")
        return self


# ---------------------------------------------------------------------------
# Run and experiment configuration
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    """One run of the algorithm or of the classical-tracking baseline."""

    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(..., ge=1, description="Iteration count T")
    k_bar: float = Field(..., gt=0, description="Step-size scale")
    w: float = Field(..., gt=0, description="Step-size offset")
    c: float = Field(..., gt=0, description="Momentum scale")
    mu: float = Field(..., gt=0, description="Surrogate modulus")
    method: Method = "costa"
    tracking_rate: float = Field(default=1.0, gt=0, description="Classical tracking constant")
    subsolver_tol: float = Field(default=SUBSOLVER_TOL, gt=0)
    subsolver_max_iter: int = Field(default=SUBSOLVER_MAX_INNER, ge=1)
    subsolver_max_outer: int = Field(default=SUBSOLVER_MAX_OUTER, ge=1)
    initial_point: Optional[List[float]] = Field(default=None, description="x_1; problem default when omitted")
    seed: int = 0
    deterministic: bool = Field(default=False, description="Use exact expected oracles")
    mc_samples: int = Field(default=MC_SAMPLES, ge=1, description="Samples for objective and KKT reporting")
    tracking_samples: int = Field(default=0, ge=0, description="Held-out samples for tracking-error estimates")
    kkt_every: int = Field(default=1, ge=1)
    feasibility_tol: float = Field(default=1e-9, ge=0, description="Slack allowed when checking x_1")
    log_every: int = Field(default=LOG_EVERY, ge=1)


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    problem: ProblemKind
    output_dir: Optional[str] = None


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    iterations: List[int] = Field(default_factory=list, description="T values; run.iterations when empty")
    methods: List[Method] = Field(default_factory=lambda: ["costa"], min_length=1)
    workers: int = Field(default=1, ge=1)


class ValidateConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    validators: List[ValidatorName] = Field(
        default_factory=lambda: ["tangent_match", "majorization", "strong_convexity", "parameters", "slater"]
    )
    samples: int = Field(default=VALIDATION_SAMPLES, ge=1)
    anchors: int = Field(default=3, ge=1, description="Anchor points checked per surrogate")
    spread: float = Field(default=1.0, gt=0, description="Scale of random perturbations around anchors")
    fd_step: float = Field(default=FD_STEP, gt=0)
    omega: Optional[float] = Field(default=None, ge=0, description="Activity threshold for the MFCQ estimate")


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trace: bool = True
    summary: bool = True
    plot_data: bool = True


class ExperimentConfig(BaseModel):
    """Whole TOML experiment file."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    experiment: ExperimentSection
    problem: Dict[str, Any] = Field(default_factory=dict)
    run: RunConfig
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    validation: ValidateConfig = Field(default_factory=ValidateConfig, alias="validate")
    output: OutputConfig = Field(default_factory=OutputConfig)
    meta: SmoothnessMeta = Field(default_factory=SmoothnessMeta)

    def problem_params(self) -> BaseModel:
        kind = self.experiment.problem
        model = {
            "synthetic-quadratic": QuadraticParams,
            "exterior-ball": ExteriorBallParams,
            "sparse-logistic": SparseLogisticParams,
            "trajectory": Environment,
        }[kind]
        return model.model_validate(self.problem)


# ---------------------------------------------------------------------------
# Reports and trace rows
# ---------------------------------------------------------------------------

class CheckStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


class ValidationCheck(BaseModel):
    name: str = Field(..., description="Inequality or property checked")
    status: CheckStatus = Field(..., description="pass, fail or skipped")
    value: Optional[float] = Field(default=None, description="Measured quantity")
    threshold: Optional[float] = Field(default=None, description="Bound it was compared against")
    message: str = Field(default="", description="Diagnostics; names the missing metadata when skipped")


class ValidationReport(BaseModel):
    subject: str = Field(..., description="What was validated, e.g. 'majorization: obstacle@anchor0'")
    checks: List[ValidationCheck] = Field(default_factory=list, description="Individual checks")

    @property
    def passed(self) -> bool:
        return all(c.status != CheckStatus.FAIL for c in self.checks)

    @property
    def failures(self) -> List[ValidationCheck]:
        return [c for c in self.checks if c.status == CheckStatus.FAIL]


class SubproblemResiduals(BaseModel):
    stationarity: float
    primal_violation: float
    complementarity: float

    def within(self, tol: float) -> bool:
        return max(self.stationarity, self.primal_violation, self.complementarity) <= tol


class KKTReport(BaseModel):
    t: Optional[int] = Field(default=None, description="Iteration the point came from")
    stationarity: float = Field(..., description="||grad U + du + J^T (lambda, nu)|| at x_hat")
    complementarity_g: float = Field(..., description="lambda^T g(x)")
    complementarity_h: float = Field(..., description="nu^T h(x)")
    feasibility: float = Field(..., description="max(0, max constraint value) at x_hat")
    samples: int = Field(..., description="Samples averaged for grad U; 0 when exact")
    exact_gradient: bool = Field(default=False, description="True when grad U came from the exact oracle")
    subgradient: List[float] = Field(default_factory=list, description="Selected element of du(x)")


class RateCertificate(BaseModel):
    T: int = Field(..., description="Horizon the bounds are evaluated for")
    M_T: float = Field(..., description="Constant of the bound, including the log factor")
    d: float = Field(..., description="(c - 4 L^2 - G^2 / (6 k^3)) / (2 L^2); the tracking bound needs d > 0")
    bound: float = Field(..., description="Bound on the average progress")
    progress_sq_bound: float = Field(..., description="Bound on the average squared progress")
    tracking_bound: Optional[float] = Field(default=None, description="Bound on the average tracking error; needs d > 0")
    kkt_epsilon: Optional[float] = Field(default=None, description="epsilon of the KKT guarantee; needs B_U and rho")
    complementarity_bound: Optional[float] = Field(default=None, description="Bound on the complementarity slack")
    inputs: Dict[str, float] = Field(default_factory=dict, description="Constants the bounds were computed from")


class IterationRecord(BaseModel):
    t: int
    eta: float
    beta: float
    delta_norm: float
    feasibility: float
    dual_norm_l1: float
    objective_est: float
    tracking_err: Optional[float] = None
    tracking_err_estimated: bool = False
    oracle_calls_gradient: int = Field(..., description="Cumulative gradient evaluations")
    oracle_calls_sample: int = Field(..., description="Cumulative samples drawn")
    subsolver_iterations: int
    subsolver_converged: bool
    surrogate_gap: float


class MonitorReport(BaseModel):
    name: str = Field(..., description="feasibility, descent, dual_bound, warm_start or tracking")
    status: CheckStatus = Field(..., description="pass, fail or skipped")
    value: Optional[float] = Field(default=None, description="Observed worst value")
    threshold: Optional[float] = Field(default=None, description="Bound it was compared against")
    violations: int = Field(default=0, description="Number of iterations or windows violating the bound")
    message: str = Field(default="", description="Diagnostics")


class RunSummary(BaseModel):
    experiment: str = Field(..., description="[experiment].name")
    problem: ProblemKind = Field(..., description="Problem selector")
    method: Method = Field(..., description="costa or classical")
    seed: int = Field(..., description="Run seed")
    iterations: int = Field(..., description="Configured T")
    completed_iterations: int = Field(..., description="Iterations finished before the run ended")
    aborted: bool = Field(default=False, description="True when the run stopped early")
    abort_reason: Optional[str] = Field(default=None, description="Why the run stopped early")
    average_progress: Optional[float] = Field(default=None, description="Mean of delta_norm over the trace")
    best_kkt_index: Optional[int] = Field(
        default=None, description="Iteration t whose KKT report minimizes stationarity^2 - min(0, lambda^T g)",
    )
    best_kkt: Optional[KKTReport] = Field(default=None, description="KKT report of x_hat at that iteration")
    rate_certificate: Optional[RateCertificate] = Field(
        default=None, description="Bound values for the configured T; null when metadata is missing",
    )
    rate_certificate_note: Optional[str] = Field(default=None, description="Missing metadata behind a null certificate")
    final_feasibility: Optional[float] = Field(default=None, description="Constraint violation of the last iterate")
    max_feasibility: Optional[float] = Field(default=None, description="Largest violation over the trace")
    final_objective: Optional[float] = Field(default=None, description="Objective estimate at the last iterate")
    initial_objective: Optional[float] = Field(default=None, description="Objective estimate at x_1")
    empirical_B_U: Optional[float] = Field(
        default=None, description="Largest observed surrogate decrease, a lower estimate of B_U",
    )
    unconverged_solves: int = Field(default=0, description="Subproblems that hit the iteration budget")
    oracle_calls_gradient: int = Field(default=0, description="Total gradient evaluations")
    oracle_calls_sample: int = Field(default=0, description="Total samples drawn")
    parameter_checks: Optional[ValidationReport] = Field(
        default=None, description="Step-size and momentum hypotheses checked against the metadata",
    )
    monitors: List[MonitorReport] = Field(default_factory=list, description="Runtime monitor reports")
    metrics: Dict[str, float] = Field(default_factory=dict, description="Problem-specific figures, see metrics.*")
    final_point: List[float] = Field(default_factory=list, description="Last iterate x_{T+1}")
