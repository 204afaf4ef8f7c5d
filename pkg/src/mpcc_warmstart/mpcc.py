"""Contouring-control objective and constraint residuals for a traffic scene.

Assembles the nonconvex cost (contour/lag tracking, progress reward, input
effort, obstacle and lane-marker potentials) and the inequality residuals
(road corridor, actuator and state boxes, lateral acceleration, ellipse-vs-
disc collision separation).  Everything is evaluated batched over the horizon
and, where needed, over candidate trajectories; the derivative bundle feeds
the SQP solver and is validated against finite differences in the tests.

Residual vector layout (fixed; >= 0 means feasible):
  for k = 0..N   : [d_rb - e_c, e_c + d_lb, delta_max - delta, delta + delta_max,
                    a_max - a, a - a_min, a_lat_max - |v^2 tan(delta)/l|]
                   plus, only when the params set them, [v_max - v] and [v - v_min]
  for k = 0..N-1 : [j_max - j, j - j_min, ddelta_max - dd, dd - ddelta_min, v_p]
  then collisions: for each obstacle o, disc i in (rear, center, front),
                   k = 0..N: scaled ellipse separation - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .path import ReferencePath
from .vehicle import (
    IA,
    IDDELTA,
    IDELTA,
    IJ,
    IPSI,
    IV,
    IVP,
    IX,
    IY,
    ITHETA,
    INPUT_DIM,
    STATE_DIM,
    Trajectory,
    VehicleParams,
)

N_STATE_RES = 7  # base residual rows per stage k = 0..N (speed window adds up to 2)
N_INPUT_RES = 5  # residual rows per stage k = 0..N-1
_XYT = np.array([IX, IY, ITHETA])  # cost/residual coupling indices (x, y, theta)


def _sym(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2) or not np.allclose(m, m.T):
        raise ValueError("weight matrices must be symmetric 2x2")
    if np.any(np.linalg.eigvalsh(m) < -1e-12):
        raise ValueError("weight matrices must be positive semidefinite")
    return m


@dataclass
class CostWeights:
    """Objective weights; Q over (e_c, e_l), R over (j, delta_dot)."""

    Q: np.ndarray = field(default_factory=lambda: np.diag([0.5, 2.0]))
    q_v: float = 1.0
    R: np.ndarray = field(default_factory=lambda: np.diag([0.02, 2.0]))
    q_ob: float = 300.0
    q_lm: float = 2.0
    sigma: float = 0.5
    Q_N: np.ndarray | None = None  # defaults to 10 * Q

    def __post_init__(self):
        self.Q = _sym(self.Q)
        self.R = _sym(self.R)
        if self.Q_N is None:
            self.Q_N = 10.0 * self.Q
        self.Q_N = _sym(self.Q_N)
        if min(self.q_v, self.q_ob, self.q_lm) < 0 or self.sigma <= 0:
            raise ValueError("scalar weights must be >= 0 and sigma > 0")


@dataclass
class ObstacleForecast:
    """Predicted obstacle poses over the horizon with inflated half-dims."""

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    half_length: float
    half_width: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.heading = np.asarray(self.heading, dtype=float)
        if not (self.x.shape == self.y.shape == self.heading.shape) or self.x.ndim != 1:
            raise ValueError("obstacle forecast arrays must be 1-D and aligned")
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("obstacle half dimensions must be positive")

    @property
    def steps(self) -> int:
        return self.x.shape[0]


@dataclass
class LaneMarkers:
    """Signed lateral offsets of lane markers from the reference path."""

    offsets: np.ndarray

    def __post_init__(self):
        self.offsets = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if self.offsets.size and np.any(np.diff(self.offsets) < 0):
            raise ValueError("lane marker offsets must be sorted ascending")


def ego_disc_radius(params: VehicleParams) -> float:
    """Radius of the three discs covering the ego footprint."""
    return float(np.hypot(params.length / 6.0, params.width / 2.0))


def ego_disc_offsets(params: VehicleParams) -> np.ndarray:
    """Longitudinal disc-center offsets: rear axle, geometric center, front axle."""
    return np.array([-params.wheelbase / 2.0, 0.0, params.wheelbase / 2.0])


class MpccProblem:
    """One planning instance: path, weights, limits, scene, and initial state."""

    def __init__(self, path: ReferencePath, weights: CostWeights, params: VehicleParams,
                 obstacles: list[ObstacleForecast], lanes: LaneMarkers, z0):
        self.path = path
        self.weights = weights
        self.params = params
        self.obstacles = list(obstacles)
        self.lanes = lanes
        z0 = np.asarray(z0.as_array() if hasattr(z0, "as_array") else z0, dtype=float)
        if z0.shape != (STATE_DIM,):
            raise ValueError(f"z0 must have {STATE_DIM} entries")
        self.z0 = z0

        n_steps = params.N + 1
        for ob in self.obstacles:
            if ob.steps != n_steps:
                raise ValueError("all obstacle forecasts must span the horizon N+1")
        # Stacked obstacle arrays (O, N+1) for batched evaluation.
        if self.obstacles:
            self.obs_x = np.stack([ob.x for ob in self.obstacles])
            self.obs_y = np.stack([ob.y for ob in self.obstacles])
            heading = np.stack([ob.heading for ob in self.obstacles])
            self.obs_cos = np.cos(heading)
            self.obs_sin = np.sin(heading)
            self.obs_l = np.array([ob.half_length for ob in self.obstacles])
            self.obs_w = np.array([ob.half_width for ob in self.obstacles])
        else:
            self.obs_x = np.zeros((0, n_steps))
            self.obs_y = np.zeros((0, n_steps))
            self.obs_cos = np.zeros((0, n_steps))
            self.obs_sin = np.zeros((0, n_steps))
            self.obs_l = np.zeros(0)
            self.obs_w = np.zeros(0)
        self.disc_radius = ego_disc_radius(params)
        self.disc_offsets = ego_disc_offsets(params)
        self.n_state_res = N_STATE_RES + (params.v_max is not None) + (params.v_min is not None)

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)

    def n_residuals(self) -> int:
        N = self.params.N
        return self.n_state_res * (N + 1) + N_INPUT_RES * N + 3 * self.n_obstacles * (N + 1)


# ---------------------------------------------------------------------------
# contouring errors


def _contouring_terms(x, y, theta, path: ReferencePath, derivs: bool = False):
    """e_c, e_l (and their (…, 2, 3) Jacobian over x, y, theta when derivs)."""
    xr, yr, psir, _, _ = path.query(theta)
    sin_r, cos_r = np.sin(psir), np.cos(psir)
    dx, dy = x - xr, y - yr
    e_c = sin_r * dx - cos_r * dy
    e_l = -cos_r * dx - sin_r * dy
    if not derivs:
        return e_c, e_l, None
    dxr, dyr, dpsir, _, _ = path.query_derivatives(theta)
    inside = (theta >= 0.0) & (theta <= path.theta_max)
    scale = np.where(inside, 1.0, 0.0)
    dxr, dyr, dpsir = dxr * scale, dyr * scale, dpsir * scale
    J = np.empty(np.shape(e_c) + (2, 3))
    J[..., 0, 0] = sin_r
    J[..., 0, 1] = -cos_r
    J[..., 0, 2] = -dpsir * e_l - sin_r * dxr + cos_r * dyr
    J[..., 1, 0] = -cos_r
    J[..., 1, 1] = -sin_r
    J[..., 1, 2] = dpsir * e_c + cos_r * dxr + sin_r * dyr
    return e_c, e_l, J


def contouring_errors(z, path: ReferencePath):
    """Approximate contouring and lag error of an augmented state."""
    z = np.asarray(z.as_array() if hasattr(z, "as_array") else z, dtype=float)
    e_c, e_l, _ = _contouring_terms(z[..., IX], z[..., IY], z[..., ITHETA], path)
    return e_c, e_l


# ---------------------------------------------------------------------------
# cost terms


def _obstacle_frame(problem: MpccProblem, px, py, ks):
    """Relative displacement in each obstacle's heading frame.

    px, py: (..., K) ego-side coordinates; ks: stage indices (K,).
    Returns dxr, dyr with shape (..., O, K) plus the frame cos/sin (O, K).
    """
    ox = problem.obs_x[:, ks]
    oy = problem.obs_y[:, ks]
    c = problem.obs_cos[:, ks]
    s = problem.obs_sin[:, ks]
    dx = px[..., None, :] - ox
    dy = py[..., None, :] - oy
    dxr = c * dx + s * dy
    dyr = -s * dx + c * dy
    return dxr, dyr, c, s


def _cost_given(e_c, e_l, x, y, U, problem: MpccProblem):
    """Total cost from precomputed contouring errors (batched leading axes)."""
    w = problem.weights
    N = problem.params.N
    e_run = np.stack([e_c[..., :N], e_l[..., :N]], axis=-1)
    cost = ((e_run @ w.Q) * e_run).sum(axis=(-2, -1))
    e_term = np.stack([e_c[..., N], e_l[..., N]], axis=-1)
    cost = cost + ((e_term @ w.Q_N) * e_term).sum(axis=-1)
    cost = cost - w.q_v * U[..., IVP].sum(axis=-1)
    uin = U[..., :2]
    cost = cost + ((uin @ w.R) * uin).sum(axis=(-2, -1))

    if problem.n_obstacles:
        dxr, dyr, _, _ = _obstacle_frame(problem, x[..., :N], y[..., :N], np.arange(N))
        s_exp = (dxr / problem.obs_l[:, None]) ** 2 + (dyr / problem.obs_w[:, None]) ** 2
        cost = cost + w.q_ob * np.exp(-s_exp).sum(axis=(-2, -1))
    if problem.lanes.offsets.size:
        r = (problem.lanes.offsets[:, None] - e_c[..., None, :N]) / w.sigma
        cost = cost + w.q_lm * np.exp(-(r**2)).sum(axis=(-2, -1))
    return cost


def _cost_core(Z, U, problem: MpccProblem) -> np.ndarray:
    """Total cost, batched over arbitrary leading axes of Z (...,N+1,7)/U (...,N,3)."""
    x, y, theta = Z[..., IX], Z[..., IY], Z[..., ITHETA]
    e_c, e_l, _ = _contouring_terms(x, y, theta, problem.path)
    return _cost_given(e_c, e_l, x, y, U, problem)


def evaluate(Z, U, problem: MpccProblem):
    """Cost and stacked residuals in one pass (the solver's line-search path)."""
    x, y, theta = Z[:, IX], Z[:, IY], Z[:, ITHETA]
    xr, yr, psir, dlb, drb = problem.path.query(theta)
    sin_r, cos_r = np.sin(psir), np.cos(psir)
    dx, dy = x - xr, y - yr
    e_c = sin_r * dx - cos_r * dy
    e_l = -cos_r * dx - sin_r * dy
    cost = float(_cost_given(e_c, e_l, x, y, U, problem))
    parts = [
        _state_residuals(Z, problem, e_c, dlb, drb).reshape(-1),
        _input_residuals(U, problem).reshape(-1),
    ]
    if problem.n_obstacles:
        parts.append(_collision_residuals_all(Z, problem).reshape(-1))
    return cost, np.concatenate(parts)


def running_cost(z, u, path: ReferencePath, weights: CostWeights) -> float:
    """Stage cost: contour/lag quadratic, progress reward, input effort."""
    z = np.asarray(z.as_array() if hasattr(z, "as_array") else z, dtype=float)
    u = np.asarray(u.as_array() if hasattr(u, "as_array") else u, dtype=float)
    e_c, e_l, _ = _contouring_terms(z[IX], z[IY], z[ITHETA], path)
    e = np.array([e_c, e_l])
    uin = u[:2]
    return float(e @ weights.Q @ e - weights.q_v * u[IVP] + uin @ weights.R @ uin)


def potential_cost(z, k: int, problem: MpccProblem) -> float:
    """Obstacle and lane-marker potential field value at stage k."""
    z = np.asarray(z.as_array() if hasattr(z, "as_array") else z, dtype=float)
    w = problem.weights
    total = 0.0
    if problem.n_obstacles:
        dxr, dyr, _, _ = _obstacle_frame(problem, z[[IX]], z[[IY]], np.array([k]))
        s_exp = (dxr[:, 0] / problem.obs_l) ** 2 + (dyr[:, 0] / problem.obs_w) ** 2
        total += w.q_ob * float(np.exp(-s_exp).sum())
    if problem.lanes.offsets.size:
        e_c, _, _ = _contouring_terms(z[IX], z[IY], z[ITHETA], problem.path)
        r = (problem.lanes.offsets - e_c) / w.sigma
        total += w.q_lm * float(np.exp(-(r**2)).sum())
    return total


def total_cost(traj: Trajectory, problem: MpccProblem) -> float:
    """Objective over the horizon: running + potential stages plus terminal."""
    return float(_cost_core(traj.states, traj.inputs, problem))


def total_cost_batch(states, inputs, problem: MpccProblem) -> np.ndarray:
    """Objective for a batch of candidate trajectories (leading axes broadcast)."""
    return np.atleast_1d(_cost_core(np.asarray(states, dtype=float), np.asarray(inputs, dtype=float), problem))


# ---------------------------------------------------------------------------
# residuals


def _state_residuals(Z, problem: MpccProblem, e_c, dlb, drb):
    """(K, n_state_res) per-stage state residual block (order per module docstring)."""
    p = problem.params
    v, a, delta = Z[..., IV], Z[..., IA], Z[..., IDELTA]
    q_lat = v**2 * np.tan(delta) / p.wheelbase
    rows = [
        drb - e_c,
        e_c + dlb,
        p.delta_max - delta,
        delta + p.delta_max,
        p.a_max - a,
        a - p.a_min,
        p.a_lat_max - np.abs(q_lat),
    ]
    if p.v_max is not None:
        rows.append(p.v_max - v)
    if p.v_min is not None:
        rows.append(v - p.v_min)
    return np.stack(rows, axis=-1)


def _input_residuals(U, problem: MpccProblem):
    p = problem.params
    j, dd, vp = U[..., IJ], U[..., IDDELTA], U[..., IVP]
    return np.stack([p.j_max - j, j - p.j_min, p.ddelta_max - dd, dd - p.ddelta_min, vp], axis=-1)


def _collision_residuals_all(Z, problem: MpccProblem, ks=None):
    """Collision residuals (O, 3, K) for stages ks (default: all)."""
    if ks is None:
        ks = np.arange(Z.shape[-2])
    x, y, psi = Z[..., IX], Z[..., IY], Z[..., IPSI]
    off = problem.disc_offsets
    cx = x[..., None, :] + off[:, None] * np.cos(psi)[..., None, :]  # (.., 3, K)
    cy = y[..., None, :] + off[:, None] * np.sin(psi)[..., None, :]
    dxr, dyr, _, _ = _obstacle_frame(problem, cx, cy, ks)  # (.., 3, O, K)
    L = (problem.obs_l + problem.disc_radius)[:, None]
    W = (problem.obs_w + problem.disc_radius)[:, None]
    res = (dxr / L) ** 2 + (dyr / W) ** 2 - 1.0
    return np.swapaxes(res, -3, -2)  # (.., O, 3, K)


def collision_residuals(z, k: int, problem: MpccProblem) -> np.ndarray:
    """Ellipse/disc separation residuals at stage k (>= 0 means collision-free)."""
    z = np.asarray(z.as_array() if hasattr(z, "as_array") else z, dtype=float)
    res = _collision_residuals_all(z[None, :], problem, np.array([k]))
    return res[..., 0].reshape(-1)


def boundary_and_state_residuals(z, u, problem: MpccProblem) -> np.ndarray:
    """Road-corridor, state-box, lateral-acceleration (and input-box) residuals.

    With u=None only the 7 state rows are returned (terminal stage).
    """
    z = np.asarray(z.as_array() if hasattr(z, "as_array") else z, dtype=float)
    e_c, _, _ = _contouring_terms(z[IX], z[IY], z[ITHETA], problem.path)
    _, _, _, dlb, drb = problem.path.query(z[ITHETA])
    rows = _state_residuals(z[None, :], problem, np.atleast_1d(e_c), np.atleast_1d(dlb), np.atleast_1d(drb))[0]
    if u is None:
        return rows
    u = np.asarray(u.as_array() if hasattr(u, "as_array") else u, dtype=float)
    return np.concatenate([rows, _input_residuals(u[None, :], problem)[0]])


def all_residuals(traj: Trajectory, problem: MpccProblem) -> np.ndarray:
    """Full stacked residual vector for one trajectory (layout in module docstring)."""
    Z, U = traj.states, traj.inputs
    x, y, theta = Z[:, IX], Z[:, IY], Z[:, ITHETA]
    e_c, _, _ = _contouring_terms(x, y, theta, problem.path)
    _, _, _, dlb, drb = problem.path.query(theta)
    parts = [
        _state_residuals(Z, problem, e_c, dlb, drb).reshape(-1),
        _input_residuals(U, problem).reshape(-1),
    ]
    if problem.n_obstacles:
        parts.append(_collision_residuals_all(Z, problem).reshape(-1))
    return np.concatenate(parts)


def max_violation(residuals: np.ndarray) -> float:
    """Largest inequality violation (0 when feasible)."""
    return float(max(0.0, -residuals.min())) if residuals.size else 0.0


# ---------------------------------------------------------------------------
# derivatives


@dataclass
class DerivativeBundle:
    """Analytic first derivatives (and Gauss-Newton curvature) at a trajectory.

    Stage-blocked for the solver: cost gradient gz (N+1,7) / gu (N,3), PSD
    curvature Hz (N+1,7,7) / Hu (N,3,3), residual values plus per-row stage
    index and local derivative rows res_dz (m,7) / res_du (m,3).
    """

    cost: float
    gz: np.ndarray
    gu: np.ndarray
    Hz: np.ndarray
    Hu: np.ndarray
    resid: np.ndarray
    res_stage: np.ndarray
    res_dz: np.ndarray
    res_du: np.ndarray

    @property
    def horizon(self) -> int:
        return self.gu.shape[0]

    @property
    def n_vars(self) -> int:
        N = self.horizon
        return STATE_DIM * (N + 1) + INPUT_DIM * N

    def dense_gradient(self) -> np.ndarray:
        return np.concatenate([self.gz.reshape(-1), self.gu.reshape(-1)])

    def dense_jacobian(self) -> np.ndarray:
        N = self.horizon
        m = self.resid.size
        J = np.zeros((m, self.n_vars))
        rows = np.arange(m)
        zcols = STATE_DIM * self.res_stage[:, None] + np.arange(STATE_DIM)[None, :]
        J[rows[:, None], zcols] = self.res_dz
        has_u = self.res_stage < N
        ucols = STATE_DIM * (N + 1) + INPUT_DIM * self.res_stage[has_u, None] + np.arange(INPUT_DIM)[None, :]
        J[rows[has_u, None], ucols] += self.res_du[has_u]
        return J

    def dense_gn_hessian(self) -> np.ndarray:
        N = self.horizon
        H = np.zeros((self.n_vars, self.n_vars))
        for k in range(N + 1):
            sl = slice(STATE_DIM * k, STATE_DIM * (k + 1))
            H[sl, sl] = self.Hz[k]
        base = STATE_DIM * (N + 1)
        for k in range(N):
            sl = slice(base + INPUT_DIM * k, base + INPUT_DIM * (k + 1))
            H[sl, sl] = self.Hu[k]
        return H


def cost_and_constraint_derivatives(traj: Trajectory, problem: MpccProblem) -> DerivativeBundle:
    """Cost value/gradient/GN-curvature and residual values/Jacobian rows."""
    w = problem.weights
    p = problem.params
    N = p.N
    Z, U = traj.states, traj.inputs
    x, y, theta = Z[:, IX], Z[:, IY], Z[:, ITHETA]
    v, a, delta = Z[:, IV], Z[:, IA], Z[:, IDELTA]

    e_c, e_l, Je = _contouring_terms(x, y, theta, problem.path, derivs=True)
    _, _, _, dlb, drb = problem.path.query(theta)
    _, _, _, ddlb, ddrb = problem.path.query_derivatives(theta)
    inside = (theta >= 0.0) & (theta <= problem.path.theta_max)
    ddlb, ddrb = ddlb * np.where(inside, 1.0, 0.0), ddrb * np.where(inside, 1.0, 0.0)

    gz = np.zeros((N + 1, STATE_DIM))
    gu = np.zeros((N, INPUT_DIM))
    Hz = np.zeros((N + 1, STATE_DIM, STATE_DIM))
    Hu = np.zeros((N, INPUT_DIM, INPUT_DIM))

    # Contour/lag quadratic: running stages with Q, terminal with Q_N.
    e = np.stack([e_c, e_l], axis=-1)  # (N+1, 2)
    Qstack = np.broadcast_to(w.Q, (N + 1, 2, 2)).copy()
    Qstack[N] = w.Q_N
    cost = float(np.einsum("ki,kij,kj->", e, Qstack, e))
    g_xyt = 2.0 * np.einsum("kji,kjl,kl->ki", Je, Qstack, e)  # (N+1, 3)
    H_xyt = 2.0 * np.einsum("kji,kjl,klm->kim", Je, Qstack, Je)  # (N+1, 3, 3)

    # Progress reward and input effort.
    cost -= w.q_v * float(U[:, IVP].sum())
    gu[:, IVP] -= w.q_v
    uin = U[:, :2]
    cost += float(np.einsum("ki,ij,kj->", uin, w.R, uin))
    gu[:, :2] += 2.0 * uin @ w.R
    Hu[:, :2, :2] += 2.0 * w.R

    # Obstacle potential over running stages.
    ks = np.arange(N)
    if problem.n_obstacles:
        dxr, dyr, c, s = _obstacle_frame(problem, x[:N], y[:N], ks)  # (O, N)
        il2 = 1.0 / problem.obs_l[:, None] ** 2
        iw2 = 1.0 / problem.obs_w[:, None] ** 2
        val = w.q_ob * np.exp(-((dxr**2) * il2 + (dyr**2) * iw2))
        cost += float(val.sum())
        ds_dx = 2.0 * dxr * il2 * c - 2.0 * dyr * iw2 * s
        ds_dy = 2.0 * dxr * il2 * s + 2.0 * dyr * iw2 * c
        gz[:N, IX] -= (val * ds_dx).sum(axis=0)
        gz[:N, IY] -= (val * ds_dy).sum(axis=0)
        Hz[:N, IX, IX] += (val * ds_dx * ds_dx).sum(axis=0)
        Hz[:N, IX, IY] += (val * ds_dx * ds_dy).sum(axis=0)
        Hz[:N, IY, IX] = Hz[:N, IX, IY]
        Hz[:N, IY, IY] += (val * ds_dy * ds_dy).sum(axis=0)

    # Lane-marker potential over running stages.
    if problem.lanes.offsets.size:
        r = (problem.lanes.offsets[:, None] - e_c[None, :N]) / w.sigma  # (L, N)
        val = w.q_lm * np.exp(-(r**2))
        cost += float(val.sum())
        coef = (val * 2.0 * r / w.sigma).sum(axis=0)  # d/d e_c
        coef2 = (val * (2.0 * r / w.sigma) ** 2).sum(axis=0)
        g_xyt[:N] += coef[:, None] * Je[:N, 0, :]
        H_xyt[:N] += coef2[:, None, None] * np.einsum("ki,kj->kij", Je[:N, 0, :], Je[:N, 0, :])

    gz[:, _XYT] += g_xyt
    Hz[:, _XYT[:, None], _XYT[None, :]] += H_xyt

    # ----- residual rows -----
    nsr = problem.n_state_res
    n_state = nsr * (N + 1)
    n_input = N_INPUT_RES * N
    n_coll = 3 * problem.n_obstacles * (N + 1)
    m = n_state + n_input + n_coll
    resid = np.empty(m)
    res_stage = np.empty(m, dtype=int)
    res_dz = np.zeros((m, STATE_DIM))
    res_du = np.zeros((m, INPUT_DIM))

    resid[:n_state] = _state_residuals(Z, problem, e_c, dlb, drb).reshape(-1)
    res_stage[:n_state] = np.repeat(np.arange(N + 1), nsr)
    dz = res_dz[:n_state].reshape(N + 1, nsr, STATE_DIM)
    dz[:, 0, _XYT] = -Je[:, 0, :]
    dz[:, 0, ITHETA] += ddrb
    dz[:, 1, _XYT] = Je[:, 0, :]
    dz[:, 1, ITHETA] += ddlb
    dz[:, 2, IDELTA] = -1.0
    dz[:, 3, IDELTA] = 1.0
    dz[:, 4, IA] = -1.0
    dz[:, 5, IA] = 1.0
    q_lat = v**2 * np.tan(delta) / p.wheelbase
    sgn = np.sign(q_lat)
    dz[:, 6, IV] = -sgn * 2.0 * v * np.tan(delta) / p.wheelbase
    dz[:, 6, IDELTA] = -sgn * v**2 / (np.cos(delta) ** 2 * p.wheelbase)
    row = 7
    if p.v_max is not None:
        dz[:, row, IV] = -1.0
        row += 1
    if p.v_min is not None:
        dz[:, row, IV] = 1.0

    resid[n_state:n_state + n_input] = _input_residuals(U, problem).reshape(-1)
    res_stage[n_state:n_state + n_input] = np.repeat(np.arange(N), N_INPUT_RES)
    du = res_du[n_state:n_state + n_input].reshape(N, N_INPUT_RES, INPUT_DIM)
    du[:, 0, IJ] = -1.0
    du[:, 1, IJ] = 1.0
    du[:, 2, IDDELTA] = -1.0
    du[:, 3, IDDELTA] = 1.0
    du[:, 4, IVP] = 1.0

    if problem.n_obstacles:
        ks_all = np.arange(N + 1)
        off = problem.disc_offsets
        cxs = x[None, :] + off[:, None] * np.cos(Z[:, IPSI])[None, :]  # (3, N+1)
        cys = y[None, :] + off[:, None] * np.sin(Z[:, IPSI])[None, :]
        dxr, dyr, c, s = _obstacle_frame(problem, cxs, cys, ks_all)  # (3, O, N+1)
        iL2 = 1.0 / (problem.obs_l + problem.disc_radius)[None, :, None] ** 2
        iW2 = 1.0 / (problem.obs_w + problem.disc_radius)[None, :, None] ** 2
        res = dxr**2 * iL2 + dyr**2 * iW2 - 1.0
        dr_dcx = 2.0 * dxr * iL2 * c - 2.0 * dyr * iW2 * s
        dr_dcy = 2.0 * dxr * iL2 * s + 2.0 * dyr * iW2 * c
        dc_dpsi_x = -off[:, None, None] * np.sin(Z[:, IPSI])[None, None, :]
        dc_dpsi_y = off[:, None, None] * np.cos(Z[:, IPSI])[None, None, :]
        dr_dpsi = dr_dcx * dc_dpsi_x + dr_dcy * dc_dpsi_y
        # Reorder (3, O, K) -> (O, 3, K) to match the documented layout.
        sl = slice(n_state + n_input, None)
        resid[sl] = np.swapaxes(res, 0, 1).reshape(-1)
        res_stage[sl] = np.tile(ks_all, 3 * problem.n_obstacles)
        dzc = res_dz[sl].reshape(problem.n_obstacles, 3, N + 1, STATE_DIM)
        dzc[..., IX] = np.swapaxes(dr_dcx, 0, 1)
        dzc[..., IY] = np.swapaxes(dr_dcy, 0, 1)
        dzc[..., IPSI] = np.swapaxes(dr_dpsi, 0, 1)

    return DerivativeBundle(cost, gz, gu, Hz, Hu, resid, res_stage, res_dz, res_du)
