"""Pluggable multimodal predictors standing in for a learned motion forecaster.

Two implementations ship behind the same interface: OracleGmmPredictor builds
maneuver-level ego modes from simulator ground truth (per-gap merge targets,
overtake/follow, proceed/yield) by rolling a simple closed-loop tracker, and
ConstantVelocityPredictor is the degraded single-mode baseline.  Both emit
per-step Gaussians over future positions for the ego and a single most
probable trajectory per obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mpcc import LaneMarkers, ObstacleForecast
from .path import ReferencePath


class MissingEgoHistory(ValueError):
    """The history list contains no ego entry (agent id 0)."""


EGO_ID = 0


@dataclass
class AgentHistory:
    """Past poses (x, y, psi, v) of one agent at strictly increasing times.

    lane_offset is the signed lateral offset of the agent's lane from the
    reference path for lane-bound traffic, None for free-moving agents
    (e.g. a crossing vehicle).  Footprint dimensions feed the inflated
    obstacle forecasts.
    """

    agent_id: int
    times: np.ndarray
    poses: np.ndarray
    lane_offset: float | None = None
    length: float = 4.8
    width: float = 2.0

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 4)
        if self.times.size < 1 or self.poses.shape[0] != self.times.size:
            raise ValueError("history needs >= 1 aligned (time, pose) entries")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("history times must be strictly increasing")

    @property
    def current(self) -> np.ndarray:
        return self.poses[-1]


@dataclass
class ModePrediction:
    """One GMM component: per-step position mean and covariance plus weight."""

    index: int
    probability: float
    means: np.ndarray  # (N+1, 2)
    covariances: np.ndarray  # (N+1, 2, 2)
    name: str = ""

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("mode probability must be in [0, 1]")
        if self.means.shape[0] != self.covariances.shape[0]:
            raise ValueError("means and covariances must span the same steps")

    @property
    def steps(self) -> int:
        return self.means.shape[0]


@dataclass
class SceneForecast:
    ego_modes: list
    obstacles: list

    def __post_init__(self):
        if not self.ego_modes:
            raise ValueError("forecast needs at least one ego mode")
        total = sum(m.probability for m in self.ego_modes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mode probabilities sum to {total}, expected 1")
        steps = {m.steps for m in self.ego_modes} | {o.steps for o in self.obstacles}
        if len(steps) > 1:
            raise ValueError("all forecast horizons must match")


@dataclass
class PredictorConfig:
    T_s: float = 0.1
    scenario_kind: str = "lane_keep"  # merge | oncoming_overtake | crossing | lane_keep
    mode_cap: int = 3
    sigma0: float = 0.15  # initial position std, m
    growth: float = 0.002  # added position variance per step, m^2
    obstacle_inflation: float = 0.3
    mean_noise_std: float = 0.0  # optional jitter on oracle mode means
    seed: int = 0
    desired_speed: float | None = None
    merge_target_offset: float = 0.0  # lateral offset of the lane merged into
    overtake_offset: float = 3.5  # lateral offset of the passing lane
    comfort_accel: float = 2.0
    comfort_brake: float = 4.5


def _covariance_ladder(n_steps: int, config: PredictorConfig) -> np.ndarray:
    var = config.sigma0**2 + np.arange(n_steps) * config.growth
    return var[:, None, None] * np.eye(2)[None, :, :]


def _lane_positions(path: ReferencePath, s, offset):
    x, y, psi, _, _ = path.query(s)
    return np.stack([x - offset * np.sin(psi), y + offset * np.cos(psi)], axis=-1), psi


def _cv_forecast(history: AgentHistory, path: ReferencePath, n_steps: int,
                 config: PredictorConfig) -> ObstacleForecast:
    """Most-probable obstacle trajectory: constant speed, lane-bound when known."""
    x, y, psi, v = history.current
    t = np.arange(n_steps) * config.T_s
    if history.lane_offset is not None:
        s0 = path.project(x, y, path.coarse_theta(x, y))
        pos, heading = _lane_positions(path, s0 + v * t, history.lane_offset)
        xs, ys = pos[:, 0], pos[:, 1]
    else:
        xs = x + v * t * np.cos(psi)
        ys = y + v * t * np.sin(psi)
        heading = np.full(n_steps, psi)
    return ObstacleForecast(
        x=xs, y=ys, heading=heading,
        half_length=history.length / 2.0 + config.obstacle_inflation,
        half_width=history.width / 2.0 + config.obstacle_inflation,
    )


def _split_histories(histories):
    ego = None
    others = []
    for h in histories:
        if h.agent_id == EGO_ID:
            ego = h
        else:
            others.append(h)
    if ego is None:
        raise MissingEgoHistory("no history entry for the ego vehicle (agent id 0)")
    return ego, others


@dataclass
class ManeuverSeed:
    """One discrete maneuver hypothesis to roll out into a mode mean."""

    name: str
    target_offset: float
    target_speed: float
    quality: float
    blend_start: float = 0.0
    blend_time: float = 2.5
    stop_at: float | None = None  # arclength to stop short of, if braking
    anchor_s: float | None = None  # gap anchor at t=0
    anchor_v: float | None = None


def _quintic_blend(tau):
    """Smooth 0 -> 1 ease with zero end slopes/accelerations."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def _roll_maneuver(seed: ManeuverSeed, s0, d0, v0, path, n_steps, config: PredictorConfig):
    """Closed-loop tracker producing (n_steps, 2) positions for one maneuver."""
    Ts = config.T_s
    s, v = float(s0), float(v0)
    anchor_s = seed.anchor_s
    ss = np.empty(n_steps)
    for k in range(n_steps):
        ss[k] = s
        v_des = seed.target_speed
        if anchor_s is not None:
            anchor = anchor_s + seed.anchor_v * k * Ts
            v_des = seed.anchor_v + 0.45 * (anchor - s)
        if seed.stop_at is not None:
            v_des = min(v_des, np.sqrt(max(0.0, 2.0 * config.comfort_brake * (seed.stop_at - s))))
        a = np.clip((v_des - v) / max(Ts, 0.4), -config.comfort_brake, config.comfort_accel)
        s += v * Ts + 0.5 * a * Ts**2
        v = max(0.0, v + a * Ts)
    t = np.arange(n_steps) * Ts
    tau = (t - seed.blend_start) / seed.blend_time
    d = d0 + (seed.target_offset - d0) * _quintic_blend(tau)
    pos, _ = _lane_positions(path, ss, d)
    return pos


def maneuver_modes(ego: AgentHistory, others, path: ReferencePath, lanes: LaneMarkers,
                   n_steps: int, config: PredictorConfig) -> list[ManeuverSeed]:
    """Enumerate discrete maneuvers for the configured scenario kind."""
    x, y, psi, v = ego.current
    s0 = path.project(x, y, path.coarse_theta(x, y))
    v_des = config.desired_speed if config.desired_speed is not None else max(v, 1.0)
    horizon_t = n_steps * config.T_s

    if config.scenario_kind == "merge":
        lane_agents = sorted(
            [h for h in others if h.lane_offset is not None
             and abs(h.lane_offset - config.merge_target_offset) < 1.0],
            key=lambda h: path.project(h.current[0], h.current[1], path.coarse_theta(h.current[0], h.current[1])),
        )
        if not lane_agents:
            return [ManeuverSeed("merge-open", config.merge_target_offset, v_des, 1.0)]
        entries = []
        for h in lane_agents:
            hs = path.project(h.current[0], h.current[1], path.coarse_theta(h.current[0], h.current[1]))
            entries.append((hs, h.current[3], h.length))
        seeds = []
        # Gap ahead of the lead vehicle, between each pair, and behind the last.
        bounds = [(entries[-1], None)]
        bounds += [(entries[i], entries[i + 1]) for i in range(len(entries) - 1)][::-1]
        bounds += [(None, entries[0])]
        for rear, lead in bounds:
            if rear is None:
                anchor = lead[0] - max(12.0, 1.6 * lead[1]) - 8.0
                anchor_v, size = lead[1], 25.0
                name = "gap-behind"
            elif lead is None:
                anchor = rear[0] + max(14.0, 1.8 * rear[1]) + 8.0
                anchor_v, size = max(rear[1], v_des), 25.0
                name = "gap-ahead"
            else:
                anchor = 0.5 * (rear[0] + lead[0])
                anchor_v = 0.5 * (rear[1] + lead[1])
                size = lead[0] - rear[0] - 0.5 * (lead[2] + rear[2])
                name = f"gap-{rear[0]:.0f}"
            closing = abs(anchor - s0) / max(horizon_t * max(v, 1.0), 1.0)
            seeds.append(ManeuverSeed(name, config.merge_target_offset, anchor_v,
                                      quality=size - 10.0 * closing,
                                      anchor_s=anchor, anchor_v=anchor_v,
                                      blend_start=0.4, blend_time=2.2))
        seeds.sort(key=lambda m: -m.quality)
        return seeds[: config.mode_cap]

    if config.scenario_kind == "oncoming_overtake":
        ahead = [h for h in others if h.lane_offset is not None and abs(h.lane_offset) < 1.0
                 and path.project(h.current[0], h.current[1], path.coarse_theta(h.current[0], h.current[1])) > s0]
        if not ahead:
            return [ManeuverSeed("lane-keep", 0.0, v_des, 1.0)]
        lead = min(ahead, key=lambda h: path.project(h.current[0], h.current[1], path.coarse_theta(h.current[0], h.current[1])))
        lead_s = path.project(lead.current[0], lead.current[1], path.coarse_theta(lead.current[0], lead.current[1]))
        lead_v = lead.current[3]
        follow = ManeuverSeed("follow-leader", 0.0, lead_v, 0.5,
                              anchor_s=lead_s - max(8.0, 1.5 * v), anchor_v=lead_v)
        overtake = ManeuverSeed("overtake", config.overtake_offset, v_des, 0.5,
                                blend_start=0.0, blend_time=2.2)
        return [overtake, follow][: config.mode_cap]

    if config.scenario_kind == "crossing":
        crossing = [h for h in others if h.lane_offset is None]
        if not crossing:
            return [ManeuverSeed("lane-keep", 0.0, v_des, 1.0)]
        agent = crossing[0]
        conflict_s = path.project(agent.current[0], agent.current[1], s0)
        proceed = ManeuverSeed("proceed", 0.0, v_des, 0.5)
        margin = 0.5 * agent.width + 4.0
        brake = ManeuverSeed("yield", 0.0, v_des, 0.5, stop_at=conflict_s - margin)
        return [brake, proceed][: config.mode_cap]

    return [ManeuverSeed("lane-keep", 0.0, v_des, 1.0)]


class OracleGmmPredictor:
    """Ground-truth-intent multimodal predictor for controlled experiments."""

    def __init__(self, config: PredictorConfig):
        self.config = config

    def predict(self, histories, path: ReferencePath, lanes: LaneMarkers,
                horizon: int) -> SceneForecast:
        config = self.config
        ego, others = _split_histories(histories)
        n_steps = horizon + 1
        x, y, psi, v = ego.current
        s0 = path.project(x, y, path.coarse_theta(x, y))
        # Current signed lateral offset of the ego (positive = left of path).
        xr, yr, psir, _, _ = path.query(s0)
        d0 = -np.sin(psir) * (x - xr) + np.cos(psir) * (y - yr)

        seeds = maneuver_modes(ego, others, path, lanes, n_steps, config)
        rng = np.random.default_rng(config.seed)
        quality = np.array([m.quality for m in seeds])
        probs = np.exp((quality - quality.max()) / 10.0)
        probs /= probs.sum()
        covs = _covariance_ladder(n_steps, config)
        modes = []
        for i, seed in enumerate(seeds):
            means = _roll_maneuver(seed, s0, d0, v, path, n_steps, config)
            if config.mean_noise_std > 0:
                means = means + rng.normal(0.0, config.mean_noise_std, means.shape)
            modes.append(ModePrediction(i, float(probs[i]), means, covs, name=seed.name))
        obstacles = [_cv_forecast(h, path, n_steps, config) for h in others]
        return SceneForecast(modes, obstacles)


class ConstantVelocityPredictor:
    """Single-mode straight extrapolation; the degraded baseline predictor."""

    def __init__(self, config: PredictorConfig):
        self.config = config

    def predict(self, histories, path: ReferencePath, lanes: LaneMarkers,
                horizon: int) -> SceneForecast:
        config = self.config
        ego, others = _split_histories(histories)
        n_steps = horizon + 1
        x, y, psi, v = ego.current
        t = np.arange(n_steps) * config.T_s
        means = np.stack([x + v * t * np.cos(psi), y + v * t * np.sin(psi)], axis=1)
        mode = ModePrediction(0, 1.0, means, _covariance_ladder(n_steps, config), name="cv")
        obstacles = [_cv_forecast(h, path, n_steps, config) for h in others]
        return SceneForecast([mode], obstacles)


def make_predictor(name: str, config: PredictorConfig):
    if name == "oracle_gmm":
        return OracleGmmPredictor(config)
    if name == "constant_velocity":
        return ConstantVelocityPredictor(config)
    raise ValueError(f"unknown predictor '{name}'")
