from dataclasses import replace

import numpy as np
import pytest

from src.core.exceptions import InvalidConfigError, InvalidInputError, SurrogateUndefinedError
from src.models.schemas import Environment, McpParams
from src.optim import cq
from src.optim.surrogate import validate_majorization
from src.problems import synthetic, trajectory
from src.problems.sparse_logistic import (
    Dataset,
    accuracy,
    build_sparse_logistic,
    make_synthetic_dataset,
    mcp_surrogate,
    mcp_value,
)
from src.utils.numerics import central_difference_gradient


def _uniform_box(anchor, half_width):
    anchor = np.asarray(anchor, dtype=float)
    return lambda rng: anchor + rng.uniform(-half_width, half_width, anchor.size)


class TestSynthetic:

    def test_quadratic_defaults(self):
        problem = synthetic.build_quadratic_problem(dimension=4, sigma=0.5)
        np.testing.assert_allclose(problem.initial_point, -np.ones(4))
        assert problem.meta.sigma == pytest.approx(1.0)
        assert problem.meta.B_1 == pytest.approx(8.0)
        assert problem.has_expectation

    def test_quadratic_ball_starts_at_origin(self):
        problem = synthetic.build_quadratic_problem(dimension=2, radius=0.5)
        np.testing.assert_allclose(problem.initial_point, [0.0, 0.0])
        assert problem.convex_values(np.array([1.0, 0.0]))[0] == pytest.approx(0.75)

    def test_quadratic_noise_is_zero_mean(self, quadratic):
        rng = np.random.default_rng(0)
        x = np.zeros(3)
        grads = np.mean([quadratic.gradient(x, quadratic.sample(rng)) for _ in range(4000)], axis=0)
        np.testing.assert_allclose(grads, quadratic.expected_gradient(x), atol=0.05)

    def test_quadratic_center_shape(self):
        with pytest.raises(InvalidInputError):
            synthetic.build_quadratic_problem(dimension=3, center=[1.0, 2.0])

    def test_exterior_ball(self, exterior_ball):
        np.testing.assert_allclose(exterior_ball.initial_point, [0.0, 1.0])
        assert exterior_ball.meta.L == 2.0
        assert exterior_ball.meta.B_1 == pytest.approx(1.04 - 0.64)
        assert exterior_ball.sample(np.random.default_rng(0)) is None


class TestMcp:

    def test_inside_switch_point(self):
        assert mcp_value([1.0], McpParams(lam=2.0, theta=5.0)) == pytest.approx(1.9)

    def test_beyond_switch_point(self):
        assert mcp_value([3.0], McpParams(lam=1.0, theta=1.0)) == pytest.approx(0.5)

    def test_surrogate_at_nonzero_anchor(self):
        p = McpParams(lam=2.0, theta=5.0, tau=0.0)
        surrogate = mcp_surrogate([1.0], p)
        for x in (-2.0, 0.0, 0.5, 3.0):
            expected = 2.0 * abs(x) - 0.1 - 0.2 * (x - 1.0)
            assert surrogate.value([x])[0] == pytest.approx(expected)

    def test_surrogate_at_origin_is_l1(self):
        p = McpParams(lam=2.0, theta=5.0, tau=0.0)
        surrogate = mcp_surrogate(np.zeros(3), p)
        assert surrogate.value([1.0, -2.0, 0.5])[0] == pytest.approx(7.0)

    @pytest.mark.parametrize("smoothed", [False, True])
    def test_surrogate_majorizes(self, smoothed):
        p = McpParams(lam=2.0, theta=5.0, tau=0.0)
        anchor = np.array([0.7, -4.0, 12.0])
        report = validate_majorization(
            mcp_surrogate(anchor, p, smoothed),
            lambda x: np.array([mcp_value(x, p, smoothed)]),
            _uniform_box(np.zeros(3), 15.0),
            2000,
            np.random.default_rng(0),
        )
        assert report.passed

    def test_smoothing_too_large(self):
        p = McpParams(lam=0.1, theta=1.0, varrho=0.5)
        with pytest.raises(InvalidConfigError):
            mcp_value([1.0], p, smoothed=True)


class TestSparseLogistic:

    @pytest.fixture
    def one_row(self):
        features = np.array([[1.0, -2.0]])
        return Dataset(features, np.array([1.0]), np.array([0]), np.array([0]))

    def test_value_and_gradient_at_zero(self, one_row):
        problem = build_sparse_logistic(one_row, McpParams())
        rows = np.array([0])
        assert problem.value(np.zeros(2), rows) == pytest.approx(np.log(2.0))
        np.testing.assert_allclose(problem.gradient(np.zeros(2), rows), [-0.5, 1.0])

    def test_gradient_matches_finite_differences(self):
        dataset = make_synthetic_dataset(samples=60, features=6, seed=1)
        problem = build_sparse_logistic(dataset, McpParams())
        x = np.random.default_rng(2).normal(size=6) * 0.3
        fd = central_difference_gradient(problem.expected_value, x, 1e-4)
        np.testing.assert_allclose(problem.expected_gradient(x), fd, atol=1e-6)

    def test_constraint_level(self, one_row):
        p = McpParams(lam=2.0, theta=5.0, tau=1.0)
        problem = build_sparse_logistic(one_row, p, smoothed=False)
        assert problem.nonconvex_values(np.array([1.0, 0.0]))[0] == pytest.approx(0.9)
        surrogate = problem.nonconvex[0].surrogate(np.array([1.0, 0.0]))
        assert surrogate.value(np.array([1.0, 0.0]))[0] == pytest.approx(0.9)

    def test_smoothness_metadata(self, one_row):
        p = McpParams()
        problem = build_sparse_logistic(one_row, p, smoothed=True)
        G = np.sqrt(5.0)
        assert problem.meta.G == pytest.approx(G)
        assert problem.meta.sigma == pytest.approx(2.0 * G)
        assert problem.meta.L == pytest.approx(max(G ** 2 / 4.0, p.lam / np.sqrt(p.varrho)))

    def test_samples_are_row_batches(self):
        dataset = make_synthetic_dataset(samples=50, features=4)
        problem = build_sparse_logistic(dataset, McpParams(), batch_size=8)
        rows = problem.sample(np.random.default_rng(0))
        assert rows.shape == (8,)
        assert rows.max() < len(dataset.train_idx)

    def test_bad_batch_size(self, one_row):
        with pytest.raises(InvalidInputError):
            build_sparse_logistic(one_row, McpParams(), batch_size=0)

    def test_accuracy(self, one_row):
        assert accuracy([1.0, 0.0], one_row) == 1.0
        assert accuracy([-1.0, 0.0], one_row) == 0.0

    def test_dataset_rejects_bad_labels(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.ones((2, 2)), np.array([1.0, 0.0]), np.array([0, 1]), np.array([], dtype=int))


def _single_agent(**overrides):
    params = dict(
        starts=[(3.0, 0.0)], goals=[(0.0, 3.0)], horizon=1, dt=1.0,
        obstacle_center=(0.0, 0.0), obstacle_radius=0.7, agent_radius=0.3, v_max=5.0, omega=0.8,
    )
    params.update(overrides)
    return Environment(**params)


def _crossing(**overrides):
    params = dict(
        starts=[(-1.0, 0.0)], goals=[(1.0, 0.0)], horizon=10, dt=0.25,
        obstacle_center=(0.0, -2.5), obstacle_radius=0.7, agent_radius=0.1, v_max=2.0, omega=0.8, sigma=0.1,
    )
    params.update(overrides)
    return Environment(**params)


def _two_agents(**overrides):
    params = dict(
        starts=[(-3.0, 0.5), (-3.0, -0.5)], goals=[(3.0, 0.5), (3.0, -0.5)], horizon=6, dt=1.0,
        obstacle_center=(0.0, 0.0), obstacle_radius=0.5, agent_radius=0.1, v_max=2.0, omega=0.8, sigma=0.1,
    )
    params.update(overrides)
    return Environment(**params)


class TestCurrents:

    def test_origin(self):
        np.testing.assert_allclose(trajectory.currents([0.0, 0.0], 0.8), [0.8, 0.0])

    def test_unit_point(self):
        np.testing.assert_allclose(trajectory.currents([1.0, 0.0], 0.8), [-0.8 / np.e, 0.0])

    def test_reflection_negates_cross_component(self):
        up = trajectory.currents([0.4, 0.9], 0.8)
        down = trajectory.currents([0.4, -0.9], 0.8)
        assert down[0] == pytest.approx(up[0])
        assert down[1] == pytest.approx(-up[1])

    def test_jacobian_matches_finite_differences(self):
        x = np.array([0.3, -0.7])
        fd = np.column_stack([
            central_difference_gradient(lambda p, k=k: trajectory.currents(p, 0.8)[k], x, 1e-4) for k in range(2)
        ]).T
        np.testing.assert_allclose(trajectory.currents_jacobian(x, 0.8), fd, atol=1e-8)

    def test_truncated_variance(self):
        assert trajectory.truncated_noise_variance(1.0) == pytest.approx(0.9733, rel=1e-3)
        assert trajectory.truncated_noise_variance(0.0) == 0.0

    def test_perturbation_is_truncated(self):
        rng = np.random.default_rng(0)
        draws = np.array([trajectory.draw_perturbation(0.2, rng) for _ in range(500)])
        assert np.abs(draws).max() <= 0.6

    def test_ensemble_member_scales_current(self):
        v = trajectory.ensemble_sample([0.0, 0.0], 0.8, 0.1, perturbation=[0.5, 0.0])
        np.testing.assert_allclose(v, [1.2, 0.0])


class TestTrajectoryProblem:

    def test_obstacle_linearization(self):
        problem = trajectory.build_trajectory_problem(_single_agent())
        obstacle = problem.nonconvex[0]
        surrogate = obstacle.surrogate(np.array([2.0, 0.0]))
        assert surrogate.value(np.array([0.0, 2.0]))[0] == pytest.approx(1.0)
        assert obstacle.value(np.array([0.0, 2.0]))[0] == pytest.approx(-1.0)

    def test_obstacle_surrogate_undefined_at_center(self):
        problem = trajectory.build_trajectory_problem(_single_agent())
        with pytest.raises(SurrogateUndefinedError):
            problem.nonconvex[0].surrogate(np.zeros(2))

    def test_blocks_for_two_agents(self):
        problem = trajectory.build_trajectory_problem(_two_agents())
        assert [b.name for b in problem.nonconvex] == ["obstacle", "separation", "speed"]
        assert problem.convex[0].size == 8
        assert problem.dimension == 24

    def test_surrogates_equal_constraints_at_anchor(self):
        problem = trajectory.build_trajectory_problem(_two_agents())
        anchor = problem.initial_point + np.random.default_rng(0).normal(scale=0.1, size=problem.dimension)
        for block in problem.nonconvex:
            np.testing.assert_allclose(block.surrogate(anchor).value(anchor), block.value(anchor), atol=1e-12)

    def test_speed_surrogate_majorizes(self):
        problem = trajectory.build_trajectory_problem(_two_agents())
        speed = problem.nonconvex[-1]
        anchor = problem.initial_point
        report = validate_majorization(
            speed.surrogate(anchor), speed.value, _uniform_box(anchor, 0.5), 2000, np.random.default_rng(1),
        )
        assert report.passed

    def test_terminal_rows_vanish_on_straight_line(self):
        env = _two_agents()
        problem = trajectory.build_trajectory_problem(env)
        np.testing.assert_allclose(problem.convex_values(trajectory.straight_line_waypoints(env)), 0.0)

    def test_energy_gradient(self):
        env = _two_agents()
        problem = trajectory.build_trajectory_problem(env)
        x = problem.initial_point + np.random.default_rng(3).normal(scale=0.2, size=problem.dimension)
        e = np.array([0.05, -0.1])
        fd = central_difference_gradient(lambda y: problem.value(y, e), x, 1e-4)
        np.testing.assert_allclose(problem.gradient(x, e), fd, atol=1e-5)

    def test_expected_energy_gradient(self):
        problem = trajectory.build_trajectory_problem(_two_agents())
        x = problem.initial_point + np.random.default_rng(4).normal(scale=0.2, size=problem.dimension)
        fd = central_difference_gradient(problem.expected_value, x, 1e-4)
        np.testing.assert_allclose(problem.expected_gradient(x), fd, atol=1e-5)

    def test_straight_line_energy_without_currents(self):
        env = Environment(
            starts=[(-1.0, 0.0)], goals=[(1.0, 0.0)], horizon=4, dt=1.0, obstacle_center=(0.0, -3.0),
            obstacle_radius=0.5, agent_radius=0.1, v_max=2.0, omega=0.0,
        )
        assert trajectory.straight_line_energy(env, 3, np.random.default_rng(0)) == pytest.approx(1.0)

    def test_start_inside_obstacle(self):
        with pytest.raises(InvalidConfigError):
            trajectory.build_trajectory_problem(_single_agent(starts=[(0.5, 0.0)]))

    def test_noise_bound_above_speed_cap(self):
        with pytest.raises(InvalidConfigError):
            trajectory.build_trajectory_problem(_single_agent(delta_current_max=5.0))

    def test_smoothness_metadata(self):
        problem = trajectory.build_trajectory_problem(_crossing())
        meta = problem.meta
        assert meta.L > 0 and meta.G > 0
        assert meta.sigma == pytest.approx(2.0 * meta.G)
        assert meta.B_1 == pytest.approx(problem.expected_value(problem.initial_point))

    def test_smoothness_metadata_bounds_the_energy(self):
        problem = trajectory.build_trajectory_problem(_crossing())
        rng = np.random.default_rng(5)
        x = problem.initial_point
        assert np.linalg.norm(problem.expected_gradient(x)) <= problem.meta.G
        for _ in range(5):
            y = x + rng.normal(scale=0.02, size=problem.dimension)
            change = np.linalg.norm(problem.expected_gradient(y) - problem.expected_gradient(x))
            assert change <= problem.meta.L * np.linalg.norm(y - x)

    def test_terminal_rows_keep_a_positive_margin(self):
        problem = trajectory.build_trajectory_problem(_crossing())
        assert problem.convex[0].equality
        x = problem.initial_point
        mfcq = cq.estimate_rho(problem, x, cq.default_omega(problem, x))
        assert 0 < mfcq.rho < np.inf
        np.testing.assert_allclose(problem.convex_jacobian(x) @ mfcq.direction, 0.0, atol=1e-7)

        as_inequalities = replace(problem, convex=(replace(problem.convex[0], equality=False),))
        with pytest.raises(InvalidInputError):
            cq.default_omega(as_inequalities, x)
        assert cq.estimate_rho(as_inequalities, x, 0.1).rho == pytest.approx(0.0, abs=1e-9)

    def test_waypoint_table_includes_start(self):
        env = _two_agents()
        rows = trajectory.waypoint_table(trajectory.straight_line_waypoints(env), env)
        assert len(rows) == 2 * 7
        assert rows[0] == (0, 0, -3.0, 0.5)
