"""Learning-aided warmstart: Bezier/BLR mode refinement and selection.

Each predicted ego mode (a per-step Gaussian over positions) is fitted with a
quintic Bezier curve by Bayesian linear regression.  The prior pins the first
three control points to the measured kinematic state through the endpoint
derivative identities, so every candidate matches the initial condition; the
prediction covariances enter as observation noise.  Sampling the posterior,
scoring each sample with the planner objective, and softmin-averaging the
control points pulls the fit toward the local optimum of its homotopy class.
The cheapest refined mode is compared against the shifted previous solution,
which therefore always upper-bounds the returned warmstart's cost.

Control-point vectors are stacked per point, x then y:
[P0x, P0y, P1x, P1y, ..., P5x, P5y]; observations interleave the same way per
step, which keeps the per-step 2x2 prediction covariances block diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import mpcc as _mpcc
from . import solver as _solver
from .mpcc import MpccProblem, ObstacleForecast
from .path import ReferencePath
from .prediction import ModePrediction, SceneForecast
from .vehicle import EGO_DIM, IA, IDELTA, IPSI, IV, IX, IY, ITHETA, Trajectory, VehicleParams

DEGREE = 5
N_POINTS = DEGREE + 1
LOW_SPEED_GUARD = 0.1  # m/s; below this, heading/curvature are ill conditioned


class SingularObservationNoise(ValueError):
    """A per-step prediction covariance is not SPD."""


class CholeskyFailure(ValueError):
    """Posterior covariance is not SPD; sampling is impossible."""


class NonFiniteCost(ValueError):
    """A candidate cost is NaN or infinite."""


class NoCandidates(ValueError):
    """Neither predicted modes nor a previous solution are available."""


@dataclass
class BezierCurve:
    """Quintic curve: control points (6, 2) and duration in seconds."""

    points: np.ndarray
    duration: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(N_POINTS, 2)
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @classmethod
    def from_flat(cls, flat, duration) -> "BezierCurve":
        return cls(np.asarray(flat, dtype=float).reshape(N_POINTS, 2), duration)

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1)


@dataclass
class ControlPointPrior:
    mean: np.ndarray  # (12,)
    cov: np.ndarray  # (12, 12) SPD


@dataclass
class BezierPosterior:
    mean: np.ndarray  # (12,)
    cov: np.ndarray  # (12, 12) SPD


@dataclass
class PriorConfig:
    """Sensor-tracking standard deviations feeding the control-point prior."""

    pos_std: float = 0.05
    vel_std: float = 0.1
    acc_std: float = 0.2
    loose_std: float = 100.0


@dataclass
class RefinementConfig:
    samples: int = 30
    softmin_temperature: float | None = None  # None: scaled per step from the cost spread
    softmin_scale: float = 3.0
    seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one refinement sample")
        if self.softmin_temperature is not None and self.softmin_temperature <= 0:
            raise ValueError("softmin temperature must be positive")


@dataclass
class WarmstartChoice:
    """Selection telemetry: what was chosen and what it cost."""

    trajectory: Trajectory
    source: str  # "mode-<m>" or "previous"
    cost: float
    mode_costs: list
    previous_cost: float | None


def _bernstein(ts, T, degree):
    s = np.asarray(ts, dtype=float) / T
    out = np.empty(np.shape(s) + (degree + 1,))
    for j in range(degree + 1):
        out[..., j] = comb(degree, j) * s**j * (1.0 - s) ** (degree - j)
    return out


def bernstein_basis(t, T) -> np.ndarray:
    """Degree-5 Bernstein basis values at time t in [0, T]; sums to 1."""
    return _bernstein(t, T, DEGREE)


def initial_control_points(z0, params: VehicleParams, T: float):
    """First three control points pinning position, velocity, and acceleration.

    The endpoint-derivative identities of a degree-5 curve give
    c'(0) = (5/T)(P1 - P0) and c''(0) = (20/T^2)(P2 - 2 P1 + P0); the state's
    velocity/acceleration vectors (including the centripetal v^2 tan(delta)/l
    term) are inverted through them.
    """
    z0 = np.asarray(z0.as_array() if hasattr(z0, "as_array") else z0, dtype=float)
    x, y, psi, v, a, delta = z0[:EGO_DIM]
    c, s = np.cos(psi), np.sin(psi)
    yaw_rate_term = v**2 * np.tan(delta) / params.wheelbase
    vel = np.array([v * c, v * s])
    acc = np.array([a * c - yaw_rate_term * s, a * s + yaw_rate_term * c])
    p0 = np.array([x, y])
    p1 = p0 + (T / 5.0) * vel
    p2 = (T**2 / 20.0) * acc + 2.0 * p1 - p0
    return p0, p1, p2


def build_prior(z0, params: VehicleParams, T: float, config: PriorConfig) -> ControlPointPrior:
    """Strong prior on P0..P2 from the tracked state; loose on the rest."""
    p0, p1, p2 = initial_control_points(z0, params, T)
    z0 = np.asarray(z0.as_array() if hasattr(z0, "as_array") else z0, dtype=float)
    v = z0[IV]
    direction = np.array([np.cos(z0[IPSI]), np.sin(z0[IPSI])])
    mean = np.empty((N_POINTS, 2))
    mean[0], mean[1], mean[2] = p0, p1, p2
    for j in range(3, N_POINTS):
        mean[j] = p0 + (j * T / 5.0) * v * direction
    var = np.empty(N_POINTS)
    var[0] = config.pos_std**2
    var[1] = config.pos_std**2 + (T / 5.0 * config.vel_std) ** 2
    var[2] = config.pos_std**2 + (2.0 * T / 5.0 * config.vel_std) ** 2 + (T**2 / 20.0 * config.acc_std) ** 2
    var[3:] = config.loose_std**2
    cov = np.diag(np.repeat(var, 2))
    return ControlPointPrior(mean.reshape(-1), cov)


def blr_fit(mode: ModePrediction, prior: ControlPointPrior, T: float) -> BezierPosterior:
    """Gaussian linear-model posterior over the stacked control points.

    Observation model y = Phi p + e with e ~ N(0, blockdiag of the per-step
    prediction covariances); posterior precision Phi' Sigma^-1 Phi + Prior^-1.
    """
    means = np.asarray(mode.means, dtype=float)
    covs = np.asarray(mode.covariances, dtype=float)
    n_obs = means.shape[0]
    ts = np.linspace(0.0, T, n_obs)
    phi = bernstein_basis(ts, T)  # (n_obs, 6)

    # Analytic 2x2 inverses of the per-step observation covariances.
    det = covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] * covs[:, 1, 0]
    if np.any(det <= 0) or np.any(covs[:, 0, 0] <= 0):
        raise SingularObservationNoise("prediction covariance must be SPD at every step")
    inv = np.empty_like(covs)
    inv[:, 0, 0] = covs[:, 1, 1] / det
    inv[:, 1, 1] = covs[:, 0, 0] / det
    inv[:, 0, 1] = -covs[:, 0, 1] / det
    inv[:, 1, 0] = -covs[:, 1, 0] / det

    # Phi' Sigma^-1 Phi assembled from per-step rank-one blocks:
    # precision[(2j+a), (2l+b)] = sum_k phi_kj phi_kl inv_k[a, b].
    outer = np.einsum("kj,kl->kjl", phi, phi)
    prec_blocks = np.einsum("kjl,kab->jalb", outer, inv)
    precision = prec_blocks.reshape(2 * N_POINTS, 2 * N_POINTS)
    # Phi' Sigma^-1 y with y the interleaved observations.
    wy = np.einsum("kab,kb->ka", inv, means)  # (n_obs, 2)
    rhs = np.einsum("kj,ka->ja", phi, wy).reshape(-1)

    prior_prec = np.linalg.inv(prior.cov)
    lam = precision + prior_prec
    cov = np.linalg.inv(lam)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (rhs + prior_prec @ prior.mean)
    return BezierPosterior(mean, cov)


def sample_control_points(post: BezierPosterior, count: int, seed) -> np.ndarray:
    """(count, 12) i.i.d. posterior draws via the Cholesky factor; seeded."""
    if count < 1:
        raise ValueError("sample count must be >= 1")
    try:
        L = np.linalg.cholesky(post.cov)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure("posterior covariance is not SPD") from exc
    rng = np.random.default_rng(seed)
    return post.mean + rng.standard_normal((count, post.mean.size)) @ L.T


def _curve_samples(flat_points, T, n_steps):
    """Positions and first two derivatives at n_steps+1 uniform times (batched)."""
    P = np.asarray(flat_points, dtype=float).reshape(-1, N_POINTS, 2)
    ts = np.linspace(0.0, T, n_steps + 1)
    d1 = np.diff(P, axis=1)  # (C, 5, 2)
    d2 = np.diff(d1, axis=1)  # (C, 4, 2)
    c = np.einsum("kj,cji->cki", _bernstein(ts, T, 5), P)
    cd = (5.0 / T) * np.einsum("kj,cji->cki", _bernstein(ts, T, 4), d1)
    cdd = (20.0 / T**2) * np.einsum("kj,cji->cki", _bernstein(ts, T, 3), d2)
    return c, cd, cdd


def _states_from_curves(flat_points, path: ReferencePath, params: VehicleParams, z0, theta_hint):
    """Batched state/input recovery: (C, N+1, 7) states and (C, N, 3) inputs."""
    N, Ts = params.N, params.T_s
    T = N * Ts
    c, cd, cdd = _curve_samples(flat_points, T, N)
    C = c.shape[0]
    speed = np.hypot(cd[..., 0], cd[..., 1])
    guard = speed < LOW_SPEED_GUARD
    safe = np.maximum(speed, LOW_SPEED_GUARD)

    psi = np.arctan2(cd[..., 1], cd[..., 0])
    kappa = np.where(guard, 0.0, (cd[..., 0] * cdd[..., 1] - cd[..., 1] * cdd[..., 0]) / safe**3)
    delta = np.arctan(params.wheelbase * kappa)
    if guard.any():
        # Hold heading/steering through low-speed stretches.
        z0psi = np.asarray(z0, dtype=float)[IPSI] if z0 is not None else 0.0
        z0delta = np.asarray(z0, dtype=float)[IDELTA] if z0 is not None else 0.0
        psi[:, 0] = np.where(guard[:, 0], z0psi, psi[:, 0])
        delta[:, 0] = np.where(guard[:, 0], z0delta, delta[:, 0])
        for k in range(1, N + 1):
            psi[:, k] = np.where(guard[:, k], psi[:, k - 1], psi[:, k])
            delta[:, k] = np.where(guard[:, k], delta[:, k - 1], delta[:, k])
    psi = np.unwrap(psi, axis=1)
    accel = (cd * cdd).sum(axis=-1) / safe

    theta = np.empty((C, N + 1))
    hint = np.full(C, float(theta_hint))
    for k in range(N + 1):
        hint = path.project(c[:, k, 0], c[:, k, 1], hint)
        if k:
            hint = np.maximum(hint, theta[:, k - 1])  # monotone progress
        theta[:, k] = hint

    Z = np.empty((C, N + 1, 7))
    Z[..., IX] = c[..., 0]
    Z[..., IY] = c[..., 1]
    Z[..., IPSI] = psi
    Z[..., IV] = speed
    Z[..., IA] = accel
    Z[..., IDELTA] = delta
    Z[..., ITHETA] = theta

    U = np.empty((C, N, 3))
    U[..., 0] = np.diff(accel, axis=1) / Ts
    U[..., 1] = np.diff(delta, axis=1) / Ts
    U[..., 2] = np.diff(theta, axis=1) / Ts
    return Z, U


def bezier_to_trajectory(curve: BezierCurve, path: ReferencePath, params: VehicleParams,
                         z0=None, theta_hint: float = 0.0) -> Trajectory:
    """Recover the full state/input trajectory from a curve's derivatives."""
    expected = params.N * params.T_s
    if abs(curve.duration - expected) > 1e-9:
        raise ValueError(f"curve duration {curve.duration} != N*T_s = {expected}")
    z0arr = None if z0 is None else np.asarray(z0.as_array() if hasattr(z0, "as_array") else z0, dtype=float)
    if z0arr is not None and theta_hint == 0.0:
        theta_hint = float(z0arr[ITHETA])
    Z, U = _states_from_curves(curve.flat()[None, :], path, params, z0arr, theta_hint)
    return Trajectory(Z[0], U[0])


def softmin_weights(costs, lam) -> np.ndarray:
    """Normalized exp(-lam * (J - J_min)) weights; the shift is exact algebra."""
    costs = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(costs)):
        raise NonFiniteCost("candidate costs must be finite")
    shifted = costs - costs.min()
    w = np.exp(-lam * shifted)
    return w / w.sum()


def cost_weighted_average(candidates, costs, lam) -> np.ndarray:
    """Softmin-weighted combination of candidate control-point vectors."""
    candidates = np.asarray(candidates, dtype=float)
    w = softmin_weights(costs, lam)
    return w @ candidates


def refine_mode(mode: ModePrediction, z0, problem: MpccProblem, config: RefinementConfig,
                seed=None) -> tuple[Trajectory, float]:
    """Fit, sample, score, and average one predicted mode into a warmstart candidate."""
    params = problem.params
    T = params.N * params.T_s
    z0arr = np.asarray(z0.as_array() if hasattr(z0, "as_array") else z0, dtype=float)
    prior = build_prior(z0arr, params, T, config.prior)
    post = blr_fit(mode, prior, T)
    draws = sample_control_points(post, config.samples, config.seed if seed is None else seed)
    candidates = np.vstack([post.mean[None, :], draws])  # candidate 0 is the mean

    theta_hint = float(z0arr[ITHETA])
    Z, U = _states_from_curves(candidates, problem.path, params, z0arr, theta_hint)
    costs = _mpcc.total_cost_batch(Z, U, problem)
    if config.softmin_temperature is not None:
        lam = config.softmin_temperature
    else:
        spread = np.median(costs - costs.min())
        lam = config.softmin_scale / max(spread, 1e-9)
    averaged = cost_weighted_average(candidates, costs, lam)
    Zf, Uf = _states_from_curves(averaged[None, :], problem.path, params, z0arr, theta_hint)
    traj = Trajectory(Zf[0], Uf[0])
    return traj, float(_mpcc.total_cost_batch(Zf, Uf, problem)[0])


def select_warmstart_detailed(forecast: SceneForecast, prev: Trajectory | None, z0,
                              problem: MpccProblem, config: RefinementConfig) -> WarmstartChoice:
    """Refine every mode, compare with the shifted previous solution, pick the cheaper."""
    modes = forecast.ego_modes if forecast is not None else []
    if not modes and prev is None:
        raise NoCandidates("no predicted modes and no previous solution")

    mode_results = []
    seeds = np.random.SeedSequence(config.seed).spawn(max(len(modes), 1))
    for m, mode in enumerate(modes):
        traj, cost = refine_mode(mode, z0, problem, config, seed=seeds[m])
        mode_results.append((cost, m, traj))

    prev_cost = None
    shifted = None
    if prev is not None:
        shifted = _solver.shift_previous(prev, problem)
        prev_cost = _mpcc.total_cost(shifted, problem)

    if mode_results:
        best_cost, best_m, best_traj = min(mode_results, key=lambda r: r[0])
        # Ties break to the shifted previous solution.
        if prev_cost is None or best_cost < prev_cost:
            return WarmstartChoice(best_traj, f"mode-{best_m}", best_cost,
                                   [r[0] for r in mode_results], prev_cost)
    return WarmstartChoice(shifted, "previous", prev_cost, [r[0] for r in mode_results], prev_cost)


def select_warmstart(forecast: SceneForecast, prev: Trajectory | None, z0,
                     problem: MpccProblem, config: RefinementConfig) -> Trajectory:
    return select_warmstart_detailed(forecast, prev, z0, problem, config).trajectory


def homotopy_signature(traj: Trajectory, obstacles: list[ObstacleForecast]) -> tuple:
    """Per-obstacle passing side from the time-aligned relative motion.

    In each obstacle's heading frame the ego either stays on one longitudinal
    side (0: no pass) or crosses the obstacle's lateral axis; the sign of the
    lateral offset at the first crossing distinguishes pass-left (+1) from
    pass-right (-1).
    """
    signs = []
    for ob in obstacles:
        n = min(traj.states.shape[0], ob.steps)
        dx = traj.states[:n, IX] - ob.x[:n]
        dy = traj.states[:n, IY] - ob.y[:n]
        c, s = np.cos(ob.heading[:n]), np.sin(ob.heading[:n])
        lon = c * dx + s * dy
        lat = -s * dx + c * dy
        flips = np.flatnonzero(np.sign(lon[:-1]) * np.sign(lon[1:]) < 0)
        if flips.size == 0:
            signs.append(0)
            continue
        k = flips[0]
        frac = lon[k] / (lon[k] - lon[k + 1])
        lat_cross = lat[k] + frac * (lat[k + 1] - lat[k])
        signs.append(int(np.sign(lat_cross)) if lat_cross != 0 else 1)
    return tuple(signs)
