"""Arclength-parameterized reference path with heading and road-boundary distances.

The path is built from centerline waypoints, reparameterized so that the
spline parameter is (numerically) the true arclength, and augmented per knot
with the heading of the tangent and the distances to the left/right road
boundary measured along the path normal.  All queries are smooth (natural
cubic splines) and clamp the arclength argument to the valid range, which
keeps them total functions on the solver's hot path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline


class TooFewWaypoints(ValueError):
    """Raised when the centerline has fewer than 4 waypoints."""


class DegenerateSegment(ValueError):
    """Raised when two consecutive centerline waypoints coincide."""


class ProjectionWarning(RuntimeWarning):
    """Emitted when the projection Newton iteration hits its iteration cap."""


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float


# Gauss-Legendre nodes/weights on [0, 1] for per-interval arclength quadrature.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS

_PROJECT_MAX_ITER = 30
_PROJECT_TOL = 1e-12


def _as_xy(points) -> np.ndarray:
    """Coerce a waypoint list (Waypoint objects or pairs) to an (K, 2) array."""
    if len(points) and isinstance(points[0], Waypoint):
        return np.array([[p.x, p.y] for p in points], dtype=float)
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"waypoints must be (K, 2), got {arr.shape}")
    return arr


def _segment_lengths(xy: np.ndarray) -> np.ndarray:
    return np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))


def _spline_arclengths(sx: CubicSpline, sy: CubicSpline, knots: np.ndarray) -> np.ndarray:
    """Cumulative arclength of the spline at each knot via per-interval quadrature."""
    t0 = knots[:-1]
    dt = np.diff(knots)
    # sample points: (intervals, gl_nodes)
    ts = t0[:, None] + dt[:, None] * _GL_NODES[None, :]
    speed = np.hypot(sx(ts, 1), sy(ts, 1))
    seg = dt * (speed @ _GL_WEIGHTS)
    return np.concatenate(([0.0], np.cumsum(seg)))


def _normal_boundary_distance(p: np.ndarray, n: np.ndarray, poly: np.ndarray) -> float:
    """Distance from p to polyline along direction n (ray cast); nearest-point fallback.

    n must be a unit vector pointing toward the boundary side.
    """
    q1 = poly[:-1]
    d = poly[1:] - q1
    # Solve p + t*n = q1 + u*d for each segment.
    det = n[0] * (-d[:, 1]) - n[1] * (-d[:, 0])
    rhs = q1 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rhs[:, 0] * (-d[:, 1]) - rhs[:, 1] * (-d[:, 0])) / det
        u = (n[0] * rhs[:, 1] - n[1] * rhs[:, 0]) / det
    hit = np.isfinite(t) & (u >= -1e-9) & (u <= 1.0 + 1e-9) & (t >= 0.0)
    if np.any(hit):
        return float(np.min(t[hit]))
    # Fallback: nearest point on the polyline (boundary may not extend this far).
    proj = np.clip(np.einsum("ij,ij->i", p - q1, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300), 0.0, 1.0)
    closest = q1 + proj[:, None] * d
    return float(np.min(np.hypot(*(p - closest).T)))


class ReferencePath:
    """Immutable arclength-parameterized centerline with boundary distances.

    Attributes:
        knots: strictly increasing arclength values, knots[0] == 0.
        theta_max: total arclength.
    """

    def __init__(self, knots, x, y, psi, d_lb, d_rb):
        self.knots = np.asarray(knots, dtype=float)
        self.theta_max = float(self.knots[-1])
        # One vector-valued spline for (x, y, psi, d_lb, d_rb): a single PPoly
        # evaluation per query keeps the solver hot path cheap.
        vals = np.stack([x, y, psi, d_lb, d_rb], axis=1)
        self._spline = CubicSpline(self.knots, vals, bc_type="natural")
        self._dspline = self._spline.derivative(1)
        self._x = CubicSpline(self.knots, x, bc_type="natural")
        self._y = CubicSpline(self.knots, y, bc_type="natural")
        self._x_knots = np.asarray(x, dtype=float)
        self._y_knots = np.asarray(y, dtype=float)

    def clamp(self, theta):
        return np.minimum(np.maximum(theta, 0.0), self.theta_max)

    def query(self, theta):
        """Evaluate (x_ref, y_ref, psi_ref, d_lb, d_rb) at theta (scalar or array)."""
        out = self._spline(self.clamp(theta))
        return tuple(np.moveaxis(out, -1, 0))

    def query_derivatives(self, theta):
        """First derivatives of (x_ref, y_ref, psi_ref, d_lb, d_rb) w.r.t. theta."""
        out = self._dspline(self.clamp(theta))
        return tuple(np.moveaxis(out, -1, 0))

    def position(self, theta):
        t = self.clamp(theta)
        return self._x(t), self._y(t)

    def heading(self, theta):
        out = self._spline(self.clamp(theta))
        return out[..., 2]

    def coarse_theta(self, x, y):
        """Arclength of the nearest knot; a global seed for project()."""
        d2 = (self._x_knots - x) ** 2 + (self._y_knots - y) ** 2
        return float(self.knots[np.argmin(d2)])

    def project(self, x, y, theta_hint):
        """Arclength of the locally closest path point, Newton-seeded at theta_hint.

        Supports batched x, y, theta_hint (aligned shapes).  Emits a
        ProjectionWarning if the iteration cap is reached; the best iterate
        is returned regardless.
        """
        theta = np.atleast_1d(self.clamp(np.asarray(theta_hint, dtype=float))).copy()
        px = np.atleast_1d(np.asarray(x, dtype=float))
        py = np.atleast_1d(np.asarray(y, dtype=float))
        converged = np.zeros(theta.shape, dtype=bool)
        for _ in range(_PROJECT_MAX_ITER):
            cx, cy = self._x(theta), self._y(theta)
            dx, dy = self._x(theta, 1), self._y(theta, 1)
            ddx, ddy = self._x(theta, 2), self._y(theta, 2)
            rx, ry = cx - px, cy - py
            g = rx * dx + ry * dy
            h = dx * dx + dy * dy + rx * ddx + ry * ddy
            step = g / np.where(np.abs(h) > 1e-12, h, 1e-12)
            step = np.clip(step, -5.0, 5.0)  # guard against bad curvature estimates
            theta_new = self.clamp(theta - np.where(converged, 0.0, step))
            converged |= np.abs(theta_new - theta) < _PROJECT_TOL
            theta = theta_new
            if np.all(converged):
                break
        if not np.all(converged):
            # Interior non-convergence is worth flagging; a clamped endpoint is not.
            at_edge = (theta <= 0.0) | (theta >= self.theta_max)
            if np.any(~converged & ~at_edge):
                warnings.warn("path projection hit the iteration cap", ProjectionWarning)
        if np.isscalar(theta_hint) or np.asarray(theta_hint).ndim == 0:
            return float(theta[0])
        return theta


def build_path(center, left_boundary, right_boundary) -> ReferencePath:
    """Build an arclength-parameterized path from center/boundary waypoints.

    The centerline is fit with natural cubic splines, reparameterized twice by
    numerically integrated arclength, and annotated per knot with unwrapped
    tangent heading and normal-ray distances to each boundary polyline.

    Raises:
        TooFewWaypoints: fewer than 4 centerline waypoints.
        DegenerateSegment: two consecutive centerline waypoints coincide.
    """
    xy = _as_xy(center)
    lb = _as_xy(left_boundary)
    rb = _as_xy(right_boundary)
    if xy.shape[0] < 4:
        raise TooFewWaypoints(f"need at least 4 center waypoints, got {xy.shape[0]}")
    seg = _segment_lengths(xy)
    if np.any(seg < 1e-9):
        raise DegenerateSegment("consecutive center waypoints coincide")

    # Chord-length parameterization, then refine to true arclength (twice).
    t = np.concatenate(([0.0], np.cumsum(seg)))
    for _ in range(2):
        sx = CubicSpline(t, xy[:, 0], bc_type="natural")
        sy = CubicSpline(t, xy[:, 1], bc_type="natural")
        t = _spline_arclengths(sx, sy, t)
    sx = CubicSpline(t, xy[:, 0], bc_type="natural")
    sy = CubicSpline(t, xy[:, 1], bc_type="natural")

    # Heading of the tangent, unwrapped so psi_ref is continuous across knots.
    psi = np.unwrap(np.arctan2(sy(t, 1), sx(t, 1)))

    d_lb = np.empty_like(t)
    d_rb = np.empty_like(t)
    for j in range(t.size):
        p = xy[j]
        n_left = np.array([-np.sin(psi[j]), np.cos(psi[j])])
        d_lb[j] = _normal_boundary_distance(p, n_left, lb)
        d_rb[j] = _normal_boundary_distance(p, -n_left, rb)

    return ReferencePath(t, xy[:, 0], xy[:, 1], psi, d_lb, d_rb)


def query(path: ReferencePath, theta):
    return path.query(theta)


def project(path: ReferencePath, x, y, theta_hint):
    return path.project(x, y, theta_hint)
