# tests/conftest.py
import textwrap

import numpy as np
import pytest

from src.core.problem import ConstraintBlock, StochasticProblem
from src.models.schemas import IterationRecord, RunConfig
from src.problems import synthetic


@pytest.fixture
def exterior_ball() -> StochasticProblem:
    """min ||x - (0.2, 0)||^2 outside the unit ball, x_1 = (0, 1)."""
    return synthetic.build_exterior_ball_problem()


@pytest.fixture
def quadratic() -> StochasticProblem:
    return synthetic.build_quadratic_problem(dimension=3, sigma=0.5, center=[1.0, 2.0, 3.0])


@pytest.fixture
def noiseless_quadratic() -> StochasticProblem:
    return synthetic.build_quadratic_problem(dimension=3, sigma=0.0, center=[1.0, 2.0, 3.0])


@pytest.fixture
def unit_disk_problem():
    """Factory for a 2-D problem with the convex constraint ||x||^2 - 1 <= 0 (or none)."""

    def make(constrained: bool = True) -> StochasticProblem:
        convex = ()
        if constrained:
            convex = (ConstraintBlock(
                name="disk",
                size=1,
                value=lambda x: np.array([float(x @ x) - 1.0]),
                jacobian=lambda x: (2.0 * x)[None, :],
            ),)
        return StochasticProblem(
            name="disk",
            dimension=2,
            sample=lambda rng: None,
            value=lambda x, xi: 0.5 * float(x @ x),
            gradient=lambda x, xi: np.array(x, dtype=float),
            convex=convex,
            expected_value=lambda x: 0.5 * float(x @ x),
            expected_gradient=lambda x: np.array(x, dtype=float),
            initial_point=np.zeros(2),
        )

    return make


@pytest.fixture
def run_config():
    """RunConfig factory with small defaults that satisfy the schedule checks."""

    def make(**overrides) -> RunConfig:
        params = dict(iterations=20, k_bar=1.0, w=8.0, c=1.0, mu=2.0)
        params.update(overrides)
        return RunConfig(**params)

    return make


@pytest.fixture
def make_record():
    def make(t: int, delta_norm: float = 0.0, tracking_err=None, **overrides) -> IterationRecord:
        params = dict(
            t=t,
            eta=0.5,
            beta=0.25,
            delta_norm=delta_norm,
            feasibility=0.0,
            dual_norm_l1=0.0,
            objective_est=0.0,
            tracking_err=tracking_err,
            oracle_calls_gradient=2 * t,
            oracle_calls_sample=t,
            subsolver_iterations=1,
            subsolver_converged=True,
            surrogate_gap=0.0,
        )
        params.update(overrides)
        return IterationRecord(**params)

    return make


@pytest.fixture
def write_config(tmp_path):
    """Write TOML text to tmp_path and return the path."""

    def write(text: str, name: str = "config.toml"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
        return path

    return write
