# src/problems/trajectory.py
"""
Energy-optimal multi-agent trajectory planning through an ensemble of ocean
currents.

Decision vector: all waypoints x_i(tau), tau = 1..T, agents i = 1..N,
flattened agent-major into R^{2NT}. The start x_i(0) is fixed.

    f(x, e) = sum_i sum_tau || x_i(tau+1) - x_i(tau) - D(e) v(x_i(tau)) dt ||^2
    D(e)    = I + diag(e),   e truncated N(0, sigma^2 I) at +-3 sigma

Constraints:
    obstacle    (r_o + r) - ||x_i(tau) - x_o||                       <= 0
    separation  2 r - ||x_i(tau) - x_j(tau)||                         <= 0
    speed       ||x_i(tau+1) - x_i(tau) - v(x_i(tau)) dt|| - (v_max - dv_max) dt <= 0
    terminal    x_i(T) = goal_i, as two affine inequalities per coordinate
"""

from typing import Optional, Tuple
import logging
import math

import numpy as np
from scipy.stats import truncnorm

from src.config import CURVATURE_SAFETY, NOISE_TRUNCATION
from src.core.exceptions import InvalidConfigError, InvalidInputError, SurrogateUndefinedError
from src.core.problem import ConstraintBlock, StochasticProblem
from src.models.schemas import Environment, SmoothnessMeta
from src.optim.surrogate import CONVEX_COMPOSITE, LINEAR, ConstraintSurrogate

logger = logging.getLogger(__name__)

# workspace grid for the derived current bounds
_GRID_HALF_WIDTH = 4.0
_GRID_POINTS = 161
_CURVATURE_FD_STEP = 1e-4


# ---------------------------------------------------------------------------
# Currents
# ---------------------------------------------------------------------------

def currents(x, omega: float) -> np.ndarray:
    """
    v(x) = omega [1 - 2 x1^2, -2 x1 x2] exp(-(x1^2 + x2^2)).

    Works on a single point (2,) or any stack of points (..., 2).
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    decay = omega * np.exp(-(x1 * x1 + x2 * x2))
    return np.stack([(1.0 - 2.0 * x1 * x1) * decay, -2.0 * x1 * x2 * decay], axis=-1)


def currents_jacobian(x, omega: float) -> np.ndarray:
    """Jacobian of `currents`, shape (..., 2, 2). It is symmetric."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    decay = omega * np.exp(-(x1 * x1 + x2 * x2))
    d11 = (-6.0 * x1 + 4.0 * x1 ** 3) * decay
    d12 = -2.0 * x2 * (1.0 - 2.0 * x1 * x1) * decay
    d22 = (-2.0 * x1 + 4.0 * x1 * x2 * x2) * decay
    row1 = np.stack([d11, d12], axis=-1)
    row2 = np.stack([d12, d22], axis=-1)
    return np.stack([row1, row2], axis=-2)


def truncated_noise_variance(sigma: float) -> float:
    """Per-coordinate variance of N(0, sigma^2) truncated at +-3 sigma."""
    if sigma == 0:
        return 0.0
    return float(truncnorm(-NOISE_TRUNCATION, NOISE_TRUNCATION, scale=sigma).var())


def draw_perturbation(sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One ensemble member e in R^2."""
    if sigma < 0:
        raise InvalidInputError(f"noise level must be nonnegative, got {sigma}")
    if sigma == 0:
        return np.zeros(2)
    return truncnorm.rvs(-NOISE_TRUNCATION, NOISE_TRUNCATION, scale=sigma, size=2, random_state=rng)


def ensemble_sample(
    x,
    omega: float,
    sigma: float,
    rng: Optional[np.random.Generator] = None,
    perturbation=None,
) -> np.ndarray:
    """
    Current seen by one ensemble member: v_k(x) (1 + e_k).

    `perturbation` injects e directly; otherwise it is drawn from rng.
    """
    if perturbation is None:
        if rng is None:
            raise InvalidInputError("either rng or perturbation is required")
        perturbation = draw_perturbation(sigma, rng)
    e = np.asarray(perturbation, dtype=float)
    return currents(x, omega) * (1.0 + e)


def _workspace_grid() -> np.ndarray:
    axis = np.linspace(-_GRID_HALF_WIDTH, _GRID_HALF_WIDTH, _GRID_POINTS)
    return np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)


def current_bounds(omega: float, sigma: float) -> Tuple[float, float]:
    """
    Bounds over the grid [-4, 4]^2 used by the speed constraint.

    Returns:
        (curvature, delta_current_max): a safety multiple of the largest
        Frobenius norm of the second derivative of v, and 3 sigma max ||v||.
    """
    grid = _workspace_grid()
    h = _CURVATURE_FD_STEP
    slices = []
    for k in range(2):
        shift = np.zeros(2)
        shift[k] = h
        slices.append((currents_jacobian(grid + shift, omega) - currents_jacobian(grid - shift, omega)) / (2.0 * h))
    second = np.stack(slices, axis=-1)
    curvature = CURVATURE_SAFETY * float(np.sqrt((second ** 2).sum(axis=(-3, -2, -1))).max())

    speed = float(np.linalg.norm(currents(grid, omega), axis=-1).max())
    return curvature, NOISE_TRUNCATION * sigma * speed


def energy_smoothness(env: Environment, curvature: float, initial_energy: float) -> SmoothnessMeta:
    """
    Smoothness constants of the energy on speed-feasible paths inside the
    workspace grid.

    Every leg residual obeys ||r|| <= r_max = (max v_max + 3 sigma V) dt, and
    the residual map has operator norm at most K = 2 + (1 + 3 sigma) dt J,
    with V and J the largest current speed and Jacobian norm on the grid.

        L     = 2 K^2 + 2 r_max (1 + 3 sigma) dt M
        G     = 2 K sqrt(N T) r_max
        sigma = 2 G
        B_1   = expected energy of the initial path (the energy is nonnegative)
    """
    grid = _workspace_grid()
    speed = float(np.linalg.norm(currents(grid, env.omega), axis=-1).max())
    jac = float(np.linalg.norm(currents_jacobian(grid, env.omega), ord=2, axis=(-2, -1)).max())
    spread = 1.0 + NOISE_TRUNCATION * env.sigma

    r_max = (max(env.v_max) + NOISE_TRUNCATION * env.sigma * speed) * env.dt
    K = 2.0 + spread * env.dt * jac
    L = 2.0 * K * K + 2.0 * r_max * spread * env.dt * curvature
    G = 2.0 * K * math.sqrt(env.n_agents * env.horizon) * r_max
    return SmoothnessMeta(L=L, G=G, sigma=2.0 * G, B_1=max(0.0, initial_energy))


# ---------------------------------------------------------------------------
# Layout helpers
# ---------------------------------------------------------------------------

class _Layout:
    """Index bookkeeping for the waypoint supervector."""

    def __init__(self, env: Environment):
        self.n_agents = env.n_agents
        self.horizon = env.horizon
        self.starts = np.asarray(env.starts, dtype=float)
        self.goals = np.asarray(env.goals, dtype=float)

    @property
    def dimension(self) -> int:
        return 2 * self.n_agents * self.horizon

    def waypoints(self, x) -> np.ndarray:
        """(N, T+1, 2) with the fixed start prepended."""
        body = np.asarray(x, dtype=float).reshape(self.n_agents, self.horizon, 2)
        return np.concatenate([self.starts[:, None, :], body], axis=1)

    def offset(self, agent: int, tau: int) -> int:
        """Flat index of the first coordinate of x_agent(tau), tau >= 1."""
        return 2 * (agent * self.horizon + tau - 1)


def straight_line_waypoints(env: Environment) -> np.ndarray:
    """Uniform straight-line trajectory; the last waypoint is exactly the goal."""
    layout = _Layout(env)
    steps = np.arange(1, env.horizon + 1) / env.horizon
    path = layout.starts[:, None, :] + steps[None, :, None] * (layout.goals - layout.starts)[:, None, :]
    path[:, -1, :] = layout.goals
    return path.reshape(-1)


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def _residuals(W: np.ndarray, e: np.ndarray, omega: float, dt: float) -> np.ndarray:
    P = W[:, :-1, :]
    return W[:, 1:, :] - P - (1.0 + e) * currents(P, omega) * dt


def energy(x, layout: _Layout, env: Environment, e) -> float:
    R = _residuals(layout.waypoints(x), np.asarray(e, dtype=float), env.omega, env.dt)
    return float((R * R).sum())


def energy_gradient(x, layout: _Layout, env: Environment, e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    W = layout.waypoints(x)
    P = W[:, :-1, :]
    R = _residuals(W, e, env.omega, env.dt)
    J = currents_jacobian(P, env.omega)

    grad = np.zeros_like(W)
    grad[:, 1:, :] += 2.0 * R
    grad[:, :-1, :] -= 2.0 * R + 2.0 * env.dt * np.einsum("ntkl,ntk->ntl", J, (1.0 + e) * R)
    return grad[:, 1:, :].reshape(-1)


def expected_energy(x, layout: _Layout, env: Environment, noise_var: float) -> float:
    """Mean residual energy plus the ensemble spread dt^2 s^2 sum ||v||^2."""
    W = layout.waypoints(x)
    V = currents(W[:, :-1, :], env.omega)
    spread = env.dt ** 2 * noise_var * float((V * V).sum())
    return energy(x, layout, env, np.zeros(2)) + spread


def expected_energy_gradient(x, layout: _Layout, env: Environment, noise_var: float) -> np.ndarray:
    grad = energy_gradient(x, layout, env, np.zeros(2))
    if noise_var == 0:
        return grad
    W = layout.waypoints(x)
    P = W[:, :-1, :]
    V = currents(P, env.omega)
    J = currents_jacobian(P, env.omega)
    extra = np.zeros_like(W)
    extra[:, :-1, :] = 2.0 * env.dt ** 2 * noise_var * np.einsum("ntkl,ntk->ntl", J, V)
    return grad + extra[:, 1:, :].reshape(-1)


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

def _norm_linearization(
    name: str,
    anchor: np.ndarray,
    level: float,
    diffs: np.ndarray,
    selectors: np.ndarray,
    row_names: Tuple[str, ...],
) -> ConstraintSurrogate:
    """
    Rows level - ||S_k x + c_k|| linearized at the anchor:
        level - ||d_k|| - <d_k / ||d_k||, S_k (x - x_t)>

    Args:
        diffs: (m, 2) values d_k = S_k x_t + c_k
        selectors: (m, 2, n) linear maps S_k

    Raises:
        SurrogateUndefinedError: If some d_k is zero
    """
    norms = np.linalg.norm(diffs, axis=1)
    if (norms == 0).any():
        bad = row_names[int(np.flatnonzero(norms == 0)[0])]
        raise SurrogateUndefinedError(f"norm linearization undefined for {bad}: anchor at the center")
    units = diffs / norms[:, None]
    J0 = np.einsum("mk,mkn->mn", units, selectors)
    g0 = level - norms

    return ConstraintSurrogate(
        name=name,
        anchor=anchor.copy(),
        size=len(row_names),
        value=lambda x: g0 - J0 @ (np.asarray(x, dtype=float) - anchor),
        jacobian=lambda x: -J0,
        tag=LINEAR,
        row_names=row_names,
    )


def _obstacle_block(layout: _Layout, env: Environment) -> ConstraintBlock:
    center = np.asarray(env.obstacle_center, dtype=float)
    level = env.obstacle_radius + env.agent_radius
    N, T, n = layout.n_agents, layout.horizon, layout.dimension
    names = tuple(f"obstacle[{i},{tau}]" for i in range(N) for tau in range(1, T + 1))

    selectors = np.zeros((N * T, 2, n))
    for row, (i, tau) in enumerate((i, tau) for i in range(N) for tau in range(1, T + 1)):
        k = layout.offset(i, tau)
        selectors[row, :, k:k + 2] = np.eye(2)

    def diffs(x) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(-1, 2) - center

    def value(x) -> np.ndarray:
        return level - np.linalg.norm(diffs(x), axis=1)

    def jacobian(x) -> np.ndarray:
        d = diffs(x)
        norms = np.linalg.norm(d, axis=1)
        units = np.divide(d, norms[:, None], out=np.zeros_like(d), where=norms[:, None] > 0)
        return -np.einsum("mk,mkn->mn", units, selectors)

    def surrogate(anchor) -> ConstraintSurrogate:
        anchor = np.asarray(anchor, dtype=float)
        return _norm_linearization("obstacle", anchor, level, diffs(anchor), selectors, names)

    return ConstraintBlock(
        name="obstacle", size=N * T, value=value, jacobian=jacobian,
        surrogate=surrogate, row_names=names,
    )


def _separation_block(layout: _Layout, env: Environment) -> Optional[ConstraintBlock]:
    N, T, n = layout.n_agents, layout.horizon, layout.dimension
    if N < 2:
        return None
    level = 2.0 * env.agent_radius
    rows = [(i, j, tau) for i in range(N) for j in range(i + 1, N) for tau in range(1, T + 1)]
    names = tuple(f"separation[{i},{j},{tau}]" for i, j, tau in rows)

    selectors = np.zeros((len(rows), 2, n))
    for row, (i, j, tau) in enumerate(rows):
        a, b = layout.offset(i, tau), layout.offset(j, tau)
        selectors[row, :, a:a + 2] = np.eye(2)
        selectors[row, :, b:b + 2] = -np.eye(2)

    def diffs(x) -> np.ndarray:
        return np.einsum("mkn,n->mk", selectors, np.asarray(x, dtype=float))

    def value(x) -> np.ndarray:
        return level - np.linalg.norm(diffs(x), axis=1)

    def jacobian(x) -> np.ndarray:
        d = diffs(x)
        norms = np.linalg.norm(d, axis=1)
        units = np.divide(d, norms[:, None], out=np.zeros_like(d), where=norms[:, None] > 0)
        return -np.einsum("mk,mkn->mn", units, selectors)

    def surrogate(anchor) -> ConstraintSurrogate:
        anchor = np.asarray(anchor, dtype=float)
        return _norm_linearization("separation", anchor, level, diffs(anchor), selectors, names)

    return ConstraintBlock(
        name="separation", size=len(rows), value=value, jacobian=jacobian,
        surrogate=surrogate, row_names=names,
    )


def _speed_block(layout: _Layout, env: Environment, curvature: float, delta_current: float) -> ConstraintBlock:
    """
    Tightened speed caps on every leg tau -> tau+1.

    The surrogate freezes the current at the anchor waypoint and adds a
    curvature term, giving ||a - v(p_t) dt - dt J(p_t)(p - p_t)|| + (dt M / 2)||p - p_t||^2 - cap.
    """
    N, T, n = layout.n_agents, layout.horizon, layout.dimension
    dt = env.dt
    caps = np.repeat([(v - delta_current) * dt for v in env.v_max], T)
    rows = [(i, tau) for i in range(N) for tau in range(T)]
    names = tuple(f"speed[{i},{tau}]" for i, tau in rows)

    # leg selectors: a = x(tau+1) - x(tau), p = x(tau); the start is a constant
    leg = np.zeros((N * T, 2, n))
    point = np.zeros((N * T, 2, n))
    for row, (i, tau) in enumerate(rows):
        nxt = layout.offset(i, tau + 1)
        leg[row, :, nxt:nxt + 2] = np.eye(2)
        if tau >= 1:
            cur = layout.offset(i, tau)
            leg[row, :, cur:cur + 2] -= np.eye(2)
            point[row, :, cur:cur + 2] = np.eye(2)

    def legs_and_points(x):
        W = layout.waypoints(x)
        return (W[:, 1:, :] - W[:, :-1, :]).reshape(-1, 2), W[:, :-1, :].reshape(-1, 2)

    def value(x) -> np.ndarray:
        a, p = legs_and_points(x)
        return np.linalg.norm(a - currents(p, env.omega) * dt, axis=1) - caps

    def jacobian(x) -> np.ndarray:
        a, p = legs_and_points(x)
        r = a - currents(p, env.omega) * dt
        norms = np.linalg.norm(r, axis=1)
        units = np.divide(r, norms[:, None], out=np.zeros_like(r), where=norms[:, None] > 0)
        J = currents_jacobian(p, env.omega)
        dr = leg - dt * np.einsum("mkl,mln->mkn", J, point)
        return np.einsum("mk,mkn->mn", units, dr)

    def surrogate(anchor) -> ConstraintSurrogate:
        anchor = np.asarray(anchor, dtype=float).copy()
        _, p0 = legs_and_points(anchor)
        v0 = currents(p0, env.omega) * dt
        J0 = currents_jacobian(p0, env.omega)
        # residual is affine in x once v and J are frozen at the anchor
        dr = leg - dt * np.einsum("mkl,mln->mkn", J0, point)

        def affine(x):
            a, p = legs_and_points(x)
            return a - v0 - dt * np.einsum("mkl,ml->mk", J0, p - p0), p - p0

        def s_value(x) -> np.ndarray:
            r, d = affine(x)
            return np.linalg.norm(r, axis=1) + 0.5 * dt * curvature * (d * d).sum(axis=1) - caps

        def s_jacobian(x) -> np.ndarray:
            r, d = affine(x)
            norms = np.linalg.norm(r, axis=1)
            units = np.divide(r, norms[:, None], out=np.zeros_like(r), where=norms[:, None] > 0)
            return np.einsum("mk,mkn->mn", units, dr) + dt * curvature * np.einsum("mk,mkn->mn", d, point)

        return ConstraintSurrogate(
            name="speed", anchor=anchor, size=N * T, value=s_value, jacobian=s_jacobian,
            tag=CONVEX_COMPOSITE, row_names=names,
        )

    return ConstraintBlock(
        name="speed", size=N * T, value=value, jacobian=jacobian, surrogate=surrogate, row_names=names,
    )


def _terminal_block(layout: _Layout) -> ConstraintBlock:
    """x_i(T) - goal_i <= 0 and goal_i - x_i(T) <= 0."""
    N, T, n = layout.n_agents, layout.horizon, layout.dimension
    select = np.zeros((2 * N, n))
    for i in range(N):
        k = layout.offset(i, T)
        select[2 * i:2 * i + 2, k:k + 2] = np.eye(2)
    goals = layout.goals.reshape(-1)
    A = np.vstack([select, -select])
    b = np.concatenate([goals, -goals])
    names = tuple(
        f"terminal[{i},{axis}]{sign}"
        for sign in ("+", "-") for i in range(N) for axis in ("x", "y")
    )
    return ConstraintBlock(
        name="terminal",
        size=4 * N,
        value=lambda x: A @ np.asarray(x, dtype=float) - b,
        jacobian=lambda x: A,
        row_names=names,
        equality=True,
    )


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------

def _check_environment(env: Environment, delta_current: float) -> None:
    center = np.asarray(env.obstacle_center, dtype=float)
    clearance = env.obstacle_radius + env.agent_radius
    for label, points in (("start", env.starts), ("goal", env.goals)):
        for i, p in enumerate(points):
            if np.linalg.norm(np.asarray(p, dtype=float) - center) <= clearance:
                raise InvalidConfigError(f"{label} of agent {i} lies inside the obstacle clearance")
    for i, v in enumerate(env.v_max):
        if v <= delta_current:
            raise InvalidConfigError(
                f"speed cap {v} of agent {i} does not exceed the current noise bound {delta_current:.4g}"
            )


def build_trajectory_problem(env: Environment) -> StochasticProblem:
    """
    Assemble the planning problem for an environment.

    Raises:
        InvalidConfigError: If a start or goal is inside the obstacle, or a
            speed cap is not above the current noise bound
    """
    curvature, derived_delta = current_bounds(env.omega, env.sigma)
    delta_current = derived_delta if env.delta_current_max is None else env.delta_current_max
    _check_environment(env, delta_current)

    layout = _Layout(env)
    noise_var = truncated_noise_variance(env.sigma)
    x0 = straight_line_waypoints(env)
    meta = energy_smoothness(env, curvature, expected_energy(x0, layout, env, noise_var))

    nonconvex = [_obstacle_block(layout, env)]
    separation = _separation_block(layout, env)
    if separation is not None:
        nonconvex.append(separation)
    nonconvex.append(_speed_block(layout, env, curvature, delta_current))

    logger.info(
        f"Built trajectory problem: {env.n_agents} agent(s), horizon {env.horizon}, dt={env.dt}, "
        f"omega={env.omega}, sigma={env.sigma}, dv_max={delta_current:.4g}, M={curvature:.4g}, "
        f"L~={meta.L:.4g}, G~={meta.G:.4g}"
    )
    return StochasticProblem(
        name="trajectory",
        dimension=layout.dimension,
        sample=lambda rng: draw_perturbation(env.sigma, rng),
        value=lambda x, e: energy(x, layout, env, e),
        gradient=lambda x, e: energy_gradient(x, layout, env, e),
        nonconvex=tuple(nonconvex),
        convex=(_terminal_block(layout),),
        meta=meta,
        expected_value=lambda x: expected_energy(x, layout, env, noise_var),
        expected_gradient=lambda x: expected_energy_gradient(x, layout, env, noise_var),
        initial_point=x0,
    )


def straight_line_energy(env: Environment, samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo energy of the uniform straight-line trajectory."""
    if samples < 1:
        raise InvalidInputError(f"need at least one sample, got {samples}")
    layout = _Layout(env)
    x = straight_line_waypoints(env)
    total = math.fsum(energy(x, layout, env, draw_perturbation(env.sigma, rng)) for _ in range(samples))
    return total / samples


def trajectory_energy(x, env: Environment, samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo energy of any waypoint vector, paired with straight_line_energy."""
    if samples < 1:
        raise InvalidInputError(f"need at least one sample, got {samples}")
    layout = _Layout(env)
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.dimension,):
        raise InvalidInputError(f"waypoint vector has shape {x.shape}, expected ({layout.dimension},)")
    total = math.fsum(energy(x, layout, env, draw_perturbation(env.sigma, rng)) for _ in range(samples))
    return total / samples


def waypoint_table(x, env: Environment):
    """(agent, tau, x, y) rows including the fixed start, for plot data."""
    W = _Layout(env).waypoints(x)
    return [
        (i, tau, float(W[i, tau, 0]), float(W[i, tau, 1]))
        for i in range(W.shape[0]) for tau in range(W.shape[1])
    ]
