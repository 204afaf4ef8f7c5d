"""Kinematic bicycle dynamics, progress augmentation, and RK4 discretization.

State layout used throughout the package (index constants below):
    z = [x, y, psi, v, a, delta, theta]        (7,)
    u = [j, delta_dot, v_p]                    (3,)
where theta is progress along the reference path and v_p the virtual path
speed advancing it.  All array operations broadcast over a leading batch
axis, which is what the solver and the sample-scoring paths rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# State / input component indices.
IX, IY, IPSI, IV, IA, IDELTA, ITHETA = range(7)
IJ, IDDELTA, IVP = range(3)

STATE_DIM = 7
INPUT_DIM = 3
EGO_DIM = 6  # bicycle substate (theta excluded)


@dataclass
class EgoState:
    """Bicycle state: position, heading, speed, acceleration, steering angle."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v: float = 0.0
    a: float = 0.0
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v, self.a, self.delta])

    @classmethod
    def from_array(cls, arr) -> "EgoState":
        return cls(*(float(v) for v in np.asarray(arr)[:EGO_DIM]))


@dataclass
class ControlInput:
    jerk: float = 0.0
    steer_rate: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.jerk, self.steer_rate])


@dataclass
class AugmentedState:
    """Bicycle state plus progress theta along the reference path."""

    ego: EgoState
    theta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.append(self.ego.as_array(), self.theta)

    @classmethod
    def from_array(cls, arr) -> "AugmentedState":
        arr = np.asarray(arr)
        return cls(ego=EgoState.from_array(arr), theta=float(arr[ITHETA]))


@dataclass
class AugmentedInput:
    """Control input plus the virtual path speed v_p (>= 0)."""

    base: ControlInput
    v_p: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.append(self.base.as_array(), self.v_p)

    @classmethod
    def from_array(cls, arr) -> "AugmentedInput":
        arr = np.asarray(arr)
        return cls(base=ControlInput(float(arr[IJ]), float(arr[IDDELTA])), v_p=float(arr[IVP]))


@dataclass
class VehicleParams:
    """Geometry, actuation limits, and discretization settings.

    Defaults are engineering choices for a mid-size car at a 0.1 s / 30-step
    horizon; scenario files override them.
    """

    wheelbase: float = 2.7
    j_min: float = -15.0
    j_max: float = 10.0
    ddelta_min: float = -0.6
    ddelta_max: float = 0.6
    delta_max: float = 0.5
    a_min: float = -8.0
    a_max: float = 4.0
    a_lat_max: float = 4.0
    length: float = 4.8
    width: float = 2.0
    T_s: float = 0.1
    N: int = 30
    # Optional speed window; None leaves the corresponding side unbounded.
    # Closed-loop scenarios set v_max, otherwise the progress reward has no
    # speed equilibrium on open road.
    v_max: float | None = None
    v_min: float | None = None

    def __post_init__(self):
        if self.wheelbase <= 0 or self.T_s <= 0:
            raise ValueError("wheelbase and T_s must be positive")
        if self.N < 2:
            raise ValueError("horizon N must be >= 2")
        for lo, hi in ((self.j_min, self.j_max), (self.ddelta_min, self.ddelta_max), (self.a_min, self.a_max)):
            if lo >= hi:
                raise ValueError("bounds must be ordered lo < hi")


@dataclass
class Trajectory:
    """Paired state/input sequences over a horizon (the solver's iterate).

    Backed by arrays: states (N+1, 7), inputs (N, 3).
    """

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != STATE_DIM:
            raise ValueError(f"states must be (N+1, {STATE_DIM})")
        if self.inputs.ndim != 2 or self.inputs.shape[1] != INPUT_DIM:
            raise ValueError(f"inputs must be (N, {INPUT_DIM})")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("states must have exactly one more row than inputs")

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def state(self, k: int) -> AugmentedState:
        return AugmentedState.from_array(self.states[k])

    def input(self, k: int) -> AugmentedInput:
        return AugmentedInput.from_array(self.inputs[k])

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.inputs.copy())


def continuous_dynamics(z, u, params: VehicleParams) -> np.ndarray:
    """Time derivative of the bicycle substate [x, y, psi, v, a, delta].

    Accepts batched z (..., >=6) and u (..., >=2).
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    psi, v = z[..., IPSI], z[..., IV]
    out = np.empty(z.shape[:-1] + (EGO_DIM,))
    out[..., IX] = v * np.cos(psi)
    out[..., IY] = v * np.sin(psi)
    out[..., IPSI] = v * np.tan(z[..., IDELTA]) / params.wheelbase
    out[..., IV] = z[..., IA]
    out[..., IA] = u[..., IJ]
    out[..., IDELTA] = u[..., IDDELTA]
    return out


def _dynamics_jacobians(z, u, params: VehicleParams):
    """Batched d(continuous_dynamics)/dz (…,6,6) and /du (…,6,2)."""
    z = np.asarray(z, dtype=float)
    batch = z.shape[:-1]
    psi, v, delta = z[..., IPSI], z[..., IV], z[..., IDELTA]
    Jz = np.zeros(batch + (EGO_DIM, EGO_DIM))
    Jz[..., IX, IPSI] = -v * np.sin(psi)
    Jz[..., IX, IV] = np.cos(psi)
    Jz[..., IY, IPSI] = v * np.cos(psi)
    Jz[..., IY, IV] = np.sin(psi)
    Jz[..., IPSI, IV] = np.tan(delta) / params.wheelbase
    Jz[..., IPSI, IDELTA] = v / (np.cos(delta) ** 2 * params.wheelbase)
    Jz[..., IV, IA] = 1.0
    Ju = np.zeros(batch + (EGO_DIM, 2))
    Ju[..., IA, 0] = 1.0
    Ju[..., IDELTA, 1] = 1.0
    return Jz, Ju


def step_array(z, u, params: VehicleParams, theta_max: float | None = None) -> np.ndarray:
    """One RK4 step of the augmented state; batched over leading axes.

    theta is advanced exactly by v_p * T_s and clamped to [0, theta_max] when
    a theta_max is given (the solver's internal model passes None to keep the
    update smooth).
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    h = params.T_s
    ze = z[..., :EGO_DIM]
    k1 = continuous_dynamics(ze, u, params)
    k2 = continuous_dynamics(ze + 0.5 * h * k1, u, params)
    k3 = continuous_dynamics(ze + 0.5 * h * k2, u, params)
    k4 = continuous_dynamics(ze + h * k3, u, params)
    out = np.empty_like(z)
    out[..., :EGO_DIM] = ze + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    theta = z[..., ITHETA] + u[..., IVP] * h
    if theta_max is not None:
        theta = np.clip(theta, 0.0, theta_max)
    out[..., ITHETA] = theta
    return out


def step_jacobians(z, u, params: VehicleParams):
    """Exact Jacobians A = d(step)/dz (…,7,7), B = d(step)/du (…,7,3) of the RK4 step."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = z.shape[:-1]
    h = params.T_s
    ze = z[..., :EGO_DIM]
    eye = np.broadcast_to(np.eye(EGO_DIM), batch + (EGO_DIM, EGO_DIM))

    ks, dkzs, dkus = [], [], []
    stage = ze
    dstage_z, dstage_u = eye, np.zeros(batch + (EGO_DIM, 2))
    for coeff in (0.5 * h, 0.5 * h, h, None):
        k = continuous_dynamics(stage, u, params)
        Jz, Ju = _dynamics_jacobians(stage, u, params)
        dk_z = Jz @ dstage_z
        dk_u = Jz @ dstage_u + Ju
        ks.append(k)
        dkzs.append(dk_z)
        dkus.append(dk_u)
        if coeff is not None:
            stage = ze + coeff * k
            dstage_z = eye + coeff * dk_z
            dstage_u = coeff * dk_u

    w = (1.0, 2.0, 2.0, 1.0)
    Ae = eye + (h / 6.0) * sum(wi * d for wi, d in zip(w, dkzs))
    Be = (h / 6.0) * sum(wi * d for wi, d in zip(w, dkus))

    A = np.zeros(batch + (STATE_DIM, STATE_DIM))
    B = np.zeros(batch + (STATE_DIM, INPUT_DIM))
    A[..., :EGO_DIM, :EGO_DIM] = Ae
    A[..., ITHETA, ITHETA] = 1.0
    B[..., :EGO_DIM, :2] = Be
    B[..., ITHETA, IVP] = h
    return A, B


def rollout_array(z0, inputs, params: VehicleParams, theta_max: float | None = None) -> np.ndarray:
    """Roll the discrete dynamics forward: (N, 3) inputs -> (N+1, 7) states."""
    inputs = np.asarray(inputs, dtype=float)
    n = inputs.shape[0]
    states = np.empty((n + 1, STATE_DIM))
    states[0] = np.asarray(z0, dtype=float)
    for k in range(n):
        states[k + 1] = step_array(states[k], inputs[k], params, theta_max)
    return states


def step(z: AugmentedState, u: AugmentedInput, params: VehicleParams,
         theta_max: float | None = None) -> AugmentedState:
    """Advance the augmented state by one sampling period."""
    return AugmentedState.from_array(step_array(z.as_array(), u.as_array(), params, theta_max))


def rollout(z0: AugmentedState, inputs, params: VehicleParams,
            theta_max: float | None = None) -> list[AugmentedState]:
    """Sequence of N+1 states from folding step over the inputs."""
    arr = np.array([u.as_array() if isinstance(u, AugmentedInput) else np.asarray(u) for u in inputs])
    if arr.size == 0:
        arr = arr.reshape(0, INPUT_DIM)
    states = rollout_array(z0.as_array(), arr, params, theta_max)
    return [AugmentedState.from_array(row) for row in states]
