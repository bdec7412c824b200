import numpy as np
import pytest

from src.core.exceptions import InvalidInputError, SubproblemInfeasibleError
from src.core.problem import ConstraintBlock, l1_regularizer, zero_regularizer
from src.optim import subsolver
from src.optim.subsolver import SubproblemSolution
from src.optim.surrogate import build_proximal_surrogate, build_running_surrogate, linearized_surrogate


def _objective(target, mu=2.0):
    """(mu/2)||x - target||^2 written as a running surrogate anchored at 0."""
    target = np.asarray(target, dtype=float)
    f_hat = build_proximal_surrogate(
        np.zeros(target.size), -mu * target, 0.5 * mu * float(target @ target), mu,
    )
    return build_running_surrogate(f_hat, f_hat.sampled_gradient)


def _upper_bound(index, level, n):
    """x[index] - level <= 0."""
    row = np.zeros(n)
    row[index] = 1.0
    return ConstraintBlock(
        name=f"x{index}<={level:g}", size=1,
        value=lambda x: np.array([float(x[index]) - level]),
        jacobian=lambda x: row[None, :],
    )


def _candidate(x, lam=(), nu=()):
    zero = subsolver.SubproblemResiduals(stationarity=0.0, primal_violation=0.0, complementarity=0.0)
    return SubproblemSolution(
        x=np.asarray(x, dtype=float), lam=np.asarray(lam, dtype=float), nu=np.asarray(nu, dtype=float),
        residuals=zero, iterations=0, outer_iterations=0, converged=True, subgradient=np.zeros(len(x)),
    )


class TestSolve:

    def test_unconstrained_quadratic(self):
        sub = subsolver.build_subproblem(_objective([1.0, -2.0], mu=1.0), zero_regularizer(), [], [])
        sol = subsolver.solve(sub)
        assert sol.converged
        np.testing.assert_allclose(sol.x, [1.0, -2.0], atol=1e-8)
        assert sol.lam.size == 0 and sol.nu.size == 0
        assert sol.residuals.within(1e-8)

    def test_active_upper_bound(self):
        # min (x - 2)^2 s.t. x <= 1: x = 1, nu = 2
        sub = subsolver.build_subproblem(_objective([2.0]), zero_regularizer(), [], [_upper_bound(0, 1.0, 1)])
        sol = subsolver.solve(sub)
        assert sol.converged
        np.testing.assert_allclose(sol.x, [1.0], atol=1e-6)
        np.testing.assert_allclose(sol.nu, [2.0], atol=1e-6)

    def test_inactive_upper_bound(self):
        sub = subsolver.build_subproblem(_objective([2.0]), zero_regularizer(), [], [_upper_bound(0, 3.0, 1)])
        sol = subsolver.solve(sub)
        np.testing.assert_allclose(sol.x, [2.0], atol=1e-6)
        np.testing.assert_allclose(sol.nu, [0.0], atol=1e-6)

    def test_disk_projection(self):
        disk = ConstraintBlock(
            name="disk", size=1, value=lambda x: np.array([float(x @ x) - 1.0]), jacobian=lambda x: (2.0 * x)[None, :],
        )
        sub = subsolver.build_subproblem(_objective([2.0, 2.0], mu=1.0), zero_regularizer(), [], [disk])
        sol = subsolver.solve(sub)
        expected = np.array([1.0, 1.0]) / np.sqrt(2.0)
        np.testing.assert_allclose(sol.x, expected, atol=1e-6)
        # stationarity: x - a + 2 nu x = 0
        np.testing.assert_allclose(sol.nu, [(2.0 * np.sqrt(2.0) - 1.0) / 2.0], atol=1e-6)

    def test_matches_grid_search(self):
        sub = subsolver.build_subproblem(
            _objective([2.0, 0.5]), zero_regularizer(), [], [_upper_bound(0, 1.0, 2), _upper_bound(1, 1.0, 2)],
        )
        sol = subsolver.solve(sub)

        axis = np.linspace(-2.0, 2.0, 401)
        X, Y = np.meshgrid(axis, axis, indexing="ij")
        values = (X - 2.0) ** 2 + (Y - 0.5) ** 2
        values[(X > 1.0 + 1e-12) | (Y > 1.0 + 1e-12)] = np.inf
        k = np.unravel_index(np.argmin(values), values.shape)
        spacing = axis[1] - axis[0]
        np.testing.assert_allclose(sol.x, [X[k], Y[k]], atol=spacing + 1e-8)

    def test_nonconvex_surrogate_rows_get_lambda(self, exterior_ball):
        # linearization of 1 - ||x||^2 at (0, 1) is the half-plane x2 >= 1
        block = exterior_ball.nonconvex[0]
        anchor = np.array([0.0, 1.0])
        sub = subsolver.build_subproblem(
            _objective([0.2, 0.0], mu=2.0), zero_regularizer(), [linearized_surrogate(block, anchor)], [],
        )
        sol = subsolver.solve(sub, warm_start=anchor)
        np.testing.assert_allclose(sol.x, [0.2, 1.0], atol=1e-6)
        np.testing.assert_allclose(sol.lam, [1.0], atol=1e-6)
        assert sol.dual_norm_l1 == pytest.approx(1.0, abs=1e-6)

    def test_l1_regularizer_through_prox(self):
        # min (1/2)(x - 2)^2 + |x| -> x = 1
        sub = subsolver.build_subproblem(_objective([2.0], mu=1.0), l1_regularizer(1.0), [], [])
        sol = subsolver.solve(sub)
        np.testing.assert_allclose(sol.x, [1.0], atol=1e-7)
        np.testing.assert_allclose(sol.subgradient, [1.0])

    def test_warm_duals_of_wrong_size_are_ignored(self):
        sub = subsolver.build_subproblem(_objective([2.0]), zero_regularizer(), [], [_upper_bound(0, 1.0, 1)])
        sol = subsolver.solve(sub, warm_duals=(np.ones(3), np.ones(2)))
        np.testing.assert_allclose(sol.x, [1.0], atol=1e-6)

    def test_infeasible_constraints(self):
        lower = ConstraintBlock(
            name="x>=1", size=1, value=lambda x: np.array([1.0 - float(x[0])]), jacobian=lambda x: np.array([[-1.0]]),
        )
        sub = subsolver.build_subproblem(
            _objective([0.0]), zero_regularizer(), [], [_upper_bound(0, -1.0, 1), lower],
        )
        with pytest.raises(SubproblemInfeasibleError):
            subsolver.solve(sub, max_iter=200)

    def test_bad_tolerance(self):
        sub = subsolver.build_subproblem(_objective([1.0]), zero_regularizer(), [], [])
        with pytest.raises(InvalidInputError):
            subsolver.solve(sub, tol=0.0)

    def test_bad_warm_start(self):
        sub = subsolver.build_subproblem(_objective([1.0]), zero_regularizer(), [], [])
        with pytest.raises(InvalidInputError):
            subsolver.solve(sub, warm_start=np.zeros(2))


class TestKKTResiduals:

    @pytest.fixture
    def bounded(self):
        return subsolver.build_subproblem(_objective([2.0]), zero_regularizer(), [], [_upper_bound(0, 1.0, 1)])

    def test_exact_point(self, bounded):
        res = subsolver.kkt_residuals(bounded, _candidate([1.0], nu=[2.0]))
        assert res.stationarity == pytest.approx(0.0, abs=1e-14)
        assert res.primal_violation == 0.0
        assert res.complementarity == 0.0

    def test_perturbed_point(self, bounded):
        res = subsolver.kkt_residuals(bounded, _candidate([1.1], nu=[2.0]))
        assert res.stationarity == pytest.approx(0.2)
        assert res.primal_violation == pytest.approx(0.1)

    def test_zero_duals_on_active_constraint(self, bounded):
        res = subsolver.kkt_residuals(bounded, _candidate([1.0], nu=[0.0]))
        assert res.complementarity == 0.0
        assert res.stationarity == pytest.approx(2.0)

    def test_recheck_of_converged_solution(self, bounded):
        tol = 1e-8
        sol = subsolver.solve(bounded, tol=tol)
        res = subsolver.kkt_residuals(bounded, sol)
        assert sol.converged
        assert res.within(2 * tol)

    def test_shape_mismatch(self, bounded):
        with pytest.raises(InvalidInputError):
            subsolver.kkt_residuals(bounded, _candidate([1.0], nu=[1.0, 1.0]))
