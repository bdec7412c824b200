from dataclasses import replace
import math

import numpy as np
import pytest

from src.core.exceptions import InvalidInputError, MetadataRequiredError
from src.core.problem import ConstraintBlock, StochasticProblem
from src.models.schemas import CheckStatus, SmoothnessMeta
from src.optim import cq
from src.optim.cq import MFCQParams
from src.optim.surrogate import linearized_surrogate


def _affine_problem(*rows):
    """2-D problem with convex rows a^T x + b <= 0, given as (a, b) pairs."""
    blocks = tuple(
        ConstraintBlock(
            name=f"h{k}", size=1,
            value=lambda x, a=np.asarray(a, float), b=b: np.array([float(a @ x) + b]),
            jacobian=lambda x, a=np.asarray(a, float): a[None, :],
        )
        for k, (a, b) in enumerate(rows)
    )
    return StochasticProblem(
        name="affine", dimension=2, sample=lambda rng: None,
        value=lambda x, xi: 0.0, gradient=lambda x, xi: np.zeros(2), convex=blocks,
    )


def _pinned_first_coordinate(*rows):
    """_affine_problem plus the equality x_1 = 0, stored as the rows (x_1, -x_1)."""
    base = _affine_problem(*rows)
    pin = ConstraintBlock(
        name="pin", size=2,
        value=lambda x: np.array([x[0], -x[0]], dtype=float),
        jacobian=lambda x: np.array([[1.0, 0.0], [-1.0, 0.0]]),
        equality=True,
    )
    return replace(base, convex=base.convex + (pin,))


class TestDefaultOmega:

    def test_interior_point(self, exterior_ball):
        assert cq.default_omega(exterior_ball, [0.0, 2.0]) == pytest.approx(3.0)

    def test_boundary_point(self, exterior_ball):
        with pytest.raises(InvalidInputError):
            cq.default_omega(exterior_ball, [0.0, 1.0])

    def test_no_constraints(self, unit_disk_problem):
        assert math.isinf(cq.default_omega(unit_disk_problem(constrained=False), [0.0, 0.0]))

    def test_equality_rows_left_out(self):
        problem = _pinned_first_coordinate(([0.0, 1.0], -2.0))
        assert cq.default_omega(problem, [0.0, 0.0]) == pytest.approx(2.0)


class TestEstimateRho:

    def test_single_active_row(self):
        problem = _affine_problem(([1.0, 0.0], 0.0))
        mfcq = cq.estimate_rho(problem, [0.0, 0.0], omega=1.0)
        assert mfcq.rho == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(mfcq.direction, [-1.0, 0.0], atol=1e-6)
        assert mfcq.active_h == (0,)

    def test_opposing_rows_have_no_margin(self):
        problem = _affine_problem(([1.0, 0.0], 0.0), ([-1.0, 0.0], 0.0))
        mfcq = cq.estimate_rho(problem, [0.0, 0.0], omega=1.0)
        assert mfcq.rho == pytest.approx(0.0, abs=1e-9)

    def test_equality_rows_restrict_the_direction(self):
        # x_1 + x_2 <= 0 alone would allow d = (-1, -1)
        problem = _pinned_first_coordinate(([1.0, 1.0], 0.0))
        mfcq = cq.estimate_rho(problem, [0.0, 0.0], omega=1.0)
        assert mfcq.rho == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(mfcq.direction, [0.0, -1.0], atol=1e-6)
        assert mfcq.active_h == (0,)

    def test_only_equality_rows_have_no_margin_to_report(self):
        mfcq = cq.estimate_rho(_pinned_first_coordinate(), [0.0, 0.0], omega=1.0)
        assert math.isinf(mfcq.rho)
        assert not mfcq.has_active

    def test_nothing_near_active(self):
        problem = _affine_problem(([1.0, 0.0], -5.0))
        mfcq = cq.estimate_rho(problem, [0.0, 0.0], omega=1.0)
        assert math.isinf(mfcq.rho)
        assert mfcq.direction is None
        assert not mfcq.has_active

    def test_exterior_boundary(self, exterior_ball):
        mfcq = cq.estimate_rho(exterior_ball, [0.0, 1.0], omega=0.1)
        assert mfcq.active_g == (0,)
        assert mfcq.rho == pytest.approx(2.0, abs=1e-6)
        np.testing.assert_allclose(mfcq.direction, [0.0, 1.0], atol=1e-6)

    def test_negative_omega(self, exterior_ball):
        with pytest.raises(InvalidInputError):
            cq.estimate_rho(exterior_ball, [0.0, 1.0], omega=-0.1)

    def test_normalized_rescales_margin(self):
        params = MFCQParams(omega=1.0, rho=2.0, direction=np.array([0.0, 2.0])).normalized()
        assert params.rho == pytest.approx(1.0)
        np.testing.assert_allclose(params.direction, [0.0, 1.0])


class TestSlaterMargin:

    @pytest.fixture
    def halfplane(self):
        return _affine_problem(([1.0, 0.0], 0.0))

    @pytest.fixture
    def mfcq(self):
        return MFCQParams(omega=1.0, rho=1.0, direction=np.array([-1.0, 0.0]), active_h=(0,))

    def test_shifted_point_below_threshold(self, halfplane, mfcq):
        report = cq.slater_margin(halfplane, [-1.0, 0.0], [], mfcq, SmoothnessMeta(L=1.0))
        row = report.checks[0]
        assert row.value == pytest.approx(-2.0)
        assert row.threshold == pytest.approx(-0.5)
        assert row.status == CheckStatus.PASS

    def test_omega_check_skipped_without_G(self, halfplane, mfcq):
        report = cq.slater_margin(halfplane, [-1.0, 0.0], [], mfcq, SmoothnessMeta(L=1.0))
        assert report.checks[-1].status == CheckStatus.SKIPPED
        assert report.passed

    def test_omega_too_small_for_G(self, halfplane, mfcq):
        report = cq.slater_margin(halfplane, [-1.0, 0.0], [], mfcq, SmoothnessMeta(L=1.0, G=1.0))
        omega_check = report.checks[-1]
        assert omega_check.threshold == pytest.approx(1.5)
        assert omega_check.status == CheckStatus.FAIL

    def test_surrogate_rows_are_checked(self, exterior_ball):
        anchor = np.array([0.0, 1.0])
        surrogate = linearized_surrogate(exterior_ball.nonconvex[0], anchor)
        mfcq = cq.estimate_rho(exterior_ball, anchor, omega=0.1)
        report = cq.slater_margin(exterior_ball, anchor, [surrogate], mfcq, SmoothnessMeta(L=2.0))
        assert report.checks[0].value == pytest.approx(-2.0, abs=1e-6)
        assert report.passed

    def test_equality_rows_only_need_to_hold(self):
        problem = _pinned_first_coordinate(([0.0, 1.0], 0.0))
        mfcq = cq.estimate_rho(problem, [0.0, 0.0], omega=1.0)
        report = cq.slater_margin(problem, [0.0, 0.0], [], mfcq, SmoothnessMeta(L=1.0))
        assert sum("(equality)" in c.name for c in report.checks) == 2
        assert report.passed

    def test_needs_L(self, halfplane, mfcq):
        with pytest.raises(MetadataRequiredError):
            cq.slater_margin(halfplane, [-1.0, 0.0], [], mfcq, SmoothnessMeta())

    def test_needs_finite_margin(self, halfplane):
        params = MFCQParams(omega=1.0, rho=math.inf, direction=None)
        with pytest.raises(InvalidInputError):
            cq.slater_margin(halfplane, [-1.0, 0.0], [], params, SmoothnessMeta(L=1.0))


class TestDualBound:

    def test_formula(self):
        assert cq.dual_bound(1.0, 2.0, 2.0) == pytest.approx(1.0)

    def test_no_active_constraint(self):
        assert cq.dual_bound(1.0, 2.0, math.inf) == 0.0

    def test_unknown_inputs(self):
        with pytest.raises(MetadataRequiredError) as info:
            cq.dual_bound(None, 1.0, None)
        assert info.value.missing == ("B_U", "rho")

    def test_nonpositive_margin(self):
        with pytest.raises(InvalidInputError):
            cq.dual_bound(1.0, 1.0, 0.0)


class TestKKTReport:

    def test_exact_kkt_point(self, exterior_ball):
        report = cq.kkt_report(exterior_ball, [1.0, 0.0], [0.8], [], mc_samples=1,
                               rng=np.random.default_rng(0), exact=True)
        assert report.stationarity == pytest.approx(0.0, abs=1e-12)
        assert report.complementarity_g == pytest.approx(0.0, abs=1e-12)
        assert report.feasibility == 0.0
        assert report.exact_gradient and report.samples == 0

    def test_sampled_gradient(self, exterior_ball):
        report = cq.kkt_report(exterior_ball, [1.0, 0.0], [0.0], [], mc_samples=5, rng=np.random.default_rng(0))
        assert report.stationarity == pytest.approx(1.6)
        assert report.samples == 5

    def test_negative_duals(self, exterior_ball):
        with pytest.raises(InvalidInputError):
            cq.kkt_report(exterior_ball, [1.0, 0.0], [-0.1], [], mc_samples=1, rng=np.random.default_rng(0))

    def test_dual_size_mismatch(self, exterior_ball):
        with pytest.raises(InvalidInputError):
            cq.kkt_report(exterior_ball, [1.0, 0.0], [0.1, 0.2], [], mc_samples=1, rng=np.random.default_rng(0))
