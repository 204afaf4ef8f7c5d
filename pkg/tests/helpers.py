"""Shared scene builders for the test suite."""

from __future__ import annotations

import numpy as np

from mpcc_warmstart.mpcc import CostWeights, LaneMarkers, MpccProblem, ObstacleForecast
from mpcc_warmstart.path import build_path
from mpcc_warmstart.vehicle import VehicleParams


def straight_path(length=200.0, half_width=3.0, n=None):
    """Straight road along +x with boundaries at y = +/- half_width."""
    n = n or max(4, int(length / 10) + 1)
    xs = np.linspace(0.0, length, n)
    center = np.stack([xs, np.zeros_like(xs)], axis=1)
    left = np.stack([xs, np.full_like(xs, half_width)], axis=1)
    right = np.stack([xs, np.full_like(xs, -half_width)], axis=1)
    return build_path(center, left, right)


def circle_path(radius=1.0, sweep=np.pi / 2, n=80, half_width=0.3):
    """Counter-clockwise arc starting at (radius, 0)."""
    t = np.linspace(0.0, sweep, n)
    center = radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    left = (radius - half_width) * np.stack([np.cos(t), np.sin(t)], axis=1)
    right = (radius + half_width) * np.stack([np.cos(t), np.sin(t)], axis=1)
    return build_path(center, left, right)


def wavy_path(length=150.0, amplitude=2.0, wavelength=60.0, half_width=4.0, n=120):
    xs = np.linspace(0.0, length, n)
    ys = amplitude * np.sin(2 * np.pi * xs / wavelength)
    dy = amplitude * 2 * np.pi / wavelength * np.cos(2 * np.pi * xs / wavelength)
    normal = np.stack([-dy, np.ones_like(xs)], axis=1)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    center = np.stack([xs, ys], axis=1)
    return build_path(center, center + half_width * normal, center - half_width * normal)


def cv_obstacle(x0, y0, heading, speed, params, half_length=2.6, half_width=1.2):
    """Constant-velocity obstacle forecast over the horizon."""
    t = np.arange(params.N + 1) * params.T_s
    return ObstacleForecast(
        x=x0 + speed * t * np.cos(heading),
        y=y0 + speed * t * np.sin(heading),
        heading=np.full(params.N + 1, heading),
        half_length=half_length,
        half_width=half_width,
    )


def simple_problem(path=None, params=None, weights=None, obstacles=(), lanes=None, z0=None):
    path = path if path is not None else straight_path()
    params = params or VehicleParams()
    weights = weights or CostWeights()
    lanes = lanes if lanes is not None else LaneMarkers(np.array([-1.75, 1.75]))
    if z0 is None:
        z0 = np.array([5.0, 0.0, 0.0, 10.0, 0.0, 0.0, 5.0])
    return MpccProblem(path, weights, params, list(obstacles), lanes, z0)


def random_trajectory(rng, problem, spread=1.0):
    """Random (interior, finite) trajectory for derivative checks."""
    from mpcc_warmstart.vehicle import Trajectory

    N = problem.params.N
    theta0 = rng.uniform(2.0, problem.path.theta_max * 0.4)
    Z = np.empty((N + 1, 7))
    Z[:, 6] = theta0 + np.cumsum(rng.uniform(0.2, 1.2, N + 1))
    xr, yr, _, _, _ = problem.path.query(Z[:, 6])
    Z[:, 0] = xr + rng.normal(0.0, spread, N + 1)
    Z[:, 1] = yr + rng.normal(0.0, spread, N + 1)
    Z[:, 2] = rng.normal(0.0, 0.3, N + 1)
    Z[:, 3] = rng.uniform(0.0, 15.0, N + 1)
    Z[:, 4] = rng.normal(0.0, 1.5, N + 1)
    Z[:, 5] = rng.uniform(-0.4, 0.4, N + 1)
    U = np.stack(
        [rng.normal(0.0, 2.0, N), rng.normal(0.0, 0.3, N), rng.uniform(0.0, 12.0, N)], axis=1
    )
    return Trajectory(Z, U)
