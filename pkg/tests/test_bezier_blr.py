import numpy as np
import pytest

from mpcc_warmstart.prediction import ModePrediction
from mpcc_warmstart.vehicle import VehicleParams
from mpcc_warmstart.warmstart import (
    BezierCurve,
    BezierPosterior,
    CholeskyFailure,
    ControlPointPrior,
    NonFiniteCost,
    PriorConfig,
    SingularObservationNoise,
    bernstein_basis,
    bezier_to_trajectory,
    blr_fit,
    build_prior,
    cost_weighted_average,
    initial_control_points,
    sample_control_points,
    softmin_weights,
)

from helpers import straight_path


def interleaved_design_matrix(n_obs, T):
    """Dense Phi built independently of the implementation's assembly."""
    ts = np.linspace(0.0, T, n_obs)
    Phi = np.zeros((2 * n_obs, 12))
    for k, t in enumerate(ts):
        phi = bernstein_basis(t, T)
        Phi[2 * k, 0::2] = phi
        Phi[2 * k + 1, 1::2] = phi
    return Phi


def flat(points):
    return np.asarray(points, dtype=float).reshape(-1)


# ------------------------------------------------------------------ basis


def test_basis_endpoints():
    np.testing.assert_allclose(bernstein_basis(0.0, 3.0), [1, 0, 0, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(bernstein_basis(3.0, 3.0), [0, 0, 0, 0, 0, 1], atol=1e-15)


def test_basis_midpoint_binomials():
    np.testing.assert_allclose(
        bernstein_basis(1.5, 3.0), np.array([1, 5, 10, 10, 5, 1]) / 32.0, atol=1e-15
    )


def test_basis_partition_of_unity():
    ts = np.linspace(0.0, 2.0, 37)
    np.testing.assert_allclose(bernstein_basis(ts, 2.0).sum(axis=-1), 1.0, atol=1e-12)


# ---------------------------------------------------- endpoint derivatives


def test_initial_points_at_rest_collapse():
    params = VehicleParams()
    z0 = np.array([2.0, -1.0, 0.7, 0.0, 0.0, 0.0, 0.0])
    p0, p1, p2 = initial_control_points(z0, params, T=3.0)
    np.testing.assert_allclose(p0, [2.0, -1.0])
    np.testing.assert_allclose(p1, p0, atol=1e-15)
    np.testing.assert_allclose(p2, p0, atol=1e-15)


def test_initial_points_straight_motion():
    params = VehicleParams()
    z0 = np.array([1.0, 2.0, 0.0, 10.0, 0.0, 0.0, 0.0])
    p0, p1, p2 = initial_control_points(z0, params, T=3.0)
    np.testing.assert_allclose(p1, p0 + np.array([6.0, 0.0]), atol=1e-12)
    np.testing.assert_allclose(p2, 2 * p1 - p0, atol=1e-12)


def test_endpoint_derivatives_match_symbolic_quintic():
    """Recover a known quintic's first three control points from its state.

    The endpoint velocity/acceleration of the symbolic curve are converted to
    (v, psi, a, delta) through the bicycle relations and fed back through the
    inversion; sympy differentiates the curve exactly.
    """
    import sympy as sp

    rng = np.random.default_rng(21)
    params = VehicleParams(wheelbase=2.7)
    T = 3.0
    t = sp.symbols("t")
    worst = 0.0
    for _ in range(5):
        P = rng.normal(0.0, 5.0, (6, 2))
        cx = sum(sp.binomial(5, j) * (t / T) ** j * (1 - t / T) ** (5 - j) * P[j, 0] for j in range(6))
        cy = sum(sp.binomial(5, j) * (t / T) ** j * (1 - t / T) ** (5 - j) * P[j, 1] for j in range(6))
        vel = np.array([float(sp.diff(c, t).subs(t, 0)) for c in (cx, cy)])
        acc = np.array([float(sp.diff(c, t, 2).subs(t, 0)) for c in (cx, cy)])
        v = np.hypot(*vel)
        if v < 1.0:
            continue
        psi = np.arctan2(vel[1], vel[0])
        a = float(vel @ acc) / v
        kappa = float(vel[0] * acc[1] - vel[1] * acc[0]) / v**3
        delta = np.arctan(params.wheelbase * kappa)
        z0 = np.array([P[0, 0], P[0, 1], psi, v, a, delta, 0.0])
        p0, p1, p2 = initial_control_points(z0, params, T)
        err = max(np.abs(p0 - P[0]).max(), np.abs(p1 - P[1]).max(), np.abs(p2 - P[2]).max())
        worst = max(worst, err)
    assert worst < 1e-9


def test_curve_endpoint_identities():
    rng = np.random.default_rng(3)
    pts = rng.normal(0, 4, (6, 2))
    curve = BezierCurve(pts, 3.0)
    phi0 = bernstein_basis(0.0, 3.0)
    phiT = bernstein_basis(3.0, 3.0)
    np.testing.assert_allclose(phi0 @ pts, pts[0], atol=1e-14)
    np.testing.assert_allclose(phiT @ pts, pts[5], atol=1e-14)


# ------------------------------------------------------------------ BLR


def synthetic_mode(points, n_obs, T, noise_var, rng=None):
    ts = np.linspace(0.0, T, n_obs)
    obs = np.stack([bernstein_basis(tk, T) @ points for tk in ts])
    if rng is not None:
        obs = obs + rng.normal(0.0, np.sqrt(noise_var), obs.shape)
    covs = np.tile(noise_var * np.eye(2), (n_obs, 1, 1))
    return ModePrediction(0, 1.0, obs, covs)


def loose_prior(scale=1e4):
    return ControlPointPrior(np.zeros(12), scale**2 * np.eye(12))


def test_blr_recovers_generating_quintic():
    rng = np.random.default_rng(8)
    points = rng.normal(0.0, 5.0, (6, 2))
    mode = synthetic_mode(points, n_obs=31, T=3.0, noise_var=1e-8)
    post = blr_fit(mode, loose_prior(), T=3.0)
    np.testing.assert_allclose(post.mean, flat(points), atol=1e-6)


def test_blr_tight_prior_dominates():
    rng = np.random.default_rng(9)
    points = rng.normal(0.0, 5.0, (6, 2))
    mode = synthetic_mode(points, n_obs=31, T=3.0, noise_var=0.5)
    prior_mean = rng.normal(0.0, 5.0, 12)
    var = np.concatenate([np.full(6, 1e-12), np.full(6, 1e8)])
    prior = ControlPointPrior(prior_mean, np.diag(var))
    post = blr_fit(mode, prior, T=3.0)
    np.testing.assert_allclose(post.mean[:6], prior_mean[:6], atol=1e-6)


def test_blr_matches_joint_gaussian_conditioning():
    """Posterior equals brute-force conditioning of the joint Gaussian."""
    rng = np.random.default_rng(10)
    T = 3.0
    n_obs = 13
    worst_mean, worst_cov = 0.0, 0.0
    for _ in range(20):
        prior_mean = rng.normal(0, 3, 12)
        A = rng.normal(0, 1, (12, 12))
        prior_cov = A @ A.T + 0.5 * np.eye(12)
        covs = np.empty((n_obs, 2, 2))
        for k in range(n_obs):
            B = rng.normal(0, 0.4, (2, 2))
            covs[k] = B @ B.T + 0.05 * np.eye(2)
        means = rng.normal(0, 5, (n_obs, 2))
        mode = ModePrediction(0, 1.0, means, covs)
        post = blr_fit(mode, ControlPointPrior(prior_mean, prior_cov), T)

        Phi = interleaved_design_matrix(n_obs, T)
        Sigma_in = np.zeros((2 * n_obs, 2 * n_obs))
        for k in range(n_obs):
            Sigma_in[2 * k:2 * k + 2, 2 * k:2 * k + 2] = covs[k]
        y = means.reshape(-1)
        S = Phi @ prior_cov @ Phi.T + Sigma_in
        K = prior_cov @ Phi.T @ np.linalg.inv(S)
        mean_ref = prior_mean + K @ (y - Phi @ prior_mean)
        cov_ref = prior_cov - K @ Phi @ prior_cov
        worst_mean = max(worst_mean, np.abs(post.mean - mean_ref).max())
        worst_cov = max(worst_cov, np.abs(post.cov - cov_ref).max())
    assert worst_mean < 1e-8
    assert worst_cov < 1e-8


def test_blr_uninformative_prior_equals_least_squares():
    rng = np.random.default_rng(11)
    T = 3.0
    n_obs = 25
    means = rng.normal(0, 5, (n_obs, 2))
    covs = np.tile(0.3 * np.eye(2), (n_obs, 1, 1))
    mode = ModePrediction(0, 1.0, means, covs)
    post = blr_fit(mode, loose_prior(1e6), T)
    Phi = interleaved_design_matrix(n_obs, T)
    ls, *_ = np.linalg.lstsq(Phi, means.reshape(-1), rcond=None)
    np.testing.assert_allclose(post.mean, ls, atol=1e-8)


def test_blr_rejects_singular_noise():
    means = np.zeros((5, 2))
    covs = np.zeros((5, 2, 2))
    mode = ModePrediction(0, 1.0, means, covs)
    with pytest.raises(SingularObservationNoise):
        blr_fit(mode, loose_prior(), T=3.0)


# ------------------------------------------------------------- sampling


def test_sampling_degenerate_covariance():
    post = BezierPosterior(np.arange(12.0), 1e-18 * np.eye(12))
    draws = sample_control_points(post, 7, seed=0)
    np.testing.assert_allclose(draws, np.tile(np.arange(12.0), (7, 1)), atol=1e-8)


def test_sampling_law_of_large_numbers():
    rng = np.random.default_rng(12)
    A = rng.normal(0, 1, (12, 12))
    cov = 0.1 * (A @ A.T) + 0.05 * np.eye(12)
    mean = rng.normal(0, 2, 12)
    draws = sample_control_points(BezierPosterior(mean, cov), 10_000, seed=5)
    sigma = np.sqrt(np.diag(cov))
    np.testing.assert_array_less(np.abs(draws.mean(axis=0) - mean), 4 * sigma / 100.0)


def test_sampling_deterministic_given_seed():
    post = BezierPosterior(np.zeros(12), np.eye(12))
    a = sample_control_points(post, 5, seed=42)
    b = sample_control_points(post, 5, seed=42)
    np.testing.assert_array_equal(a, b)


def test_sampling_cholesky_failure():
    cov = -np.eye(12)
    with pytest.raises(CholeskyFailure):
        sample_control_points(BezierPosterior(np.zeros(12), cov), 3, seed=0)


# ------------------------------------------------- curve -> trajectory


def test_straight_constant_speed_recovery():
    params = VehicleParams()
    path = straight_path(length=200.0)
    v = 8.0
    T = params.N * params.T_s
    pts = np.stack([10.0 + np.arange(6) * v * T / 5.0, np.zeros(6)], axis=1)
    z0 = np.array([10.0, 0.0, 0.0, v, 0.0, 0.0, 10.0])
    traj = bezier_to_trajectory(BezierCurve(pts, T), path, params, z0=z0)
    np.testing.assert_allclose(traj.states[:, 2], 0.0, atol=1e-10)  # psi = psi_ref
    np.testing.assert_allclose(traj.states[:, 3], v, atol=1e-9)
    np.testing.assert_allclose(traj.states[:, 5], 0.0, atol=1e-12)  # delta
    np.testing.assert_allclose(traj.states[:, 1], 0.0, atol=1e-12)  # e_c = 0
    np.testing.assert_allclose(traj.inputs[:, 2], v, atol=1e-6)  # v_p = v


def test_circular_arc_steering_angle():
    params = VehicleParams(wheelbase=2.7)
    path = straight_path(length=400.0)
    R = 60.0
    T = params.N * params.T_s
    v = 10.0
    sweep = v * T / R
    ts = np.linspace(0.0, T, 61)
    ang = sweep * ts / T
    arc = np.stack([R * np.sin(ang), R * (1 - np.cos(ang))], axis=1)
    # Least-squares quintic fit of the dense arc.
    Phi = np.stack([bernstein_basis(tk, T) for tk in ts])
    px, *_ = np.linalg.lstsq(Phi, arc[:, 0], rcond=None)
    py, *_ = np.linalg.lstsq(Phi, arc[:, 1], rcond=None)
    curve = BezierCurve(np.stack([px, py], axis=1), T)
    traj = bezier_to_trajectory(curve, path, params, theta_hint=0.0)
    expected = np.arctan(params.wheelbase / R)
    mid = traj.states[10:20, 5]
    assert np.abs(mid - expected).max() / expected < 0.02


def test_degenerate_curve_is_stationary():
    params = VehicleParams()
    path = straight_path()
    pts = np.tile([30.0, 0.5], (6, 1))
    z0 = np.array([30.0, 0.5, 0.2, 0.0, 0.0, 0.1, 30.0])
    traj = bezier_to_trajectory(BezierCurve(pts, params.N * params.T_s), path, params, z0=z0)
    np.testing.assert_allclose(traj.states[:, 3], 0.0, atol=1e-12)
    np.testing.assert_allclose(traj.states[:, 0], 30.0, atol=1e-12)
    np.testing.assert_allclose(traj.states[:, 2], 0.2, atol=1e-12)  # held from z0
    np.testing.assert_allclose(traj.states[:, 5], 0.1, atol=1e-12)


def test_duration_mismatch_rejected():
    params = VehicleParams()
    with pytest.raises(ValueError):
        bezier_to_trajectory(BezierCurve(np.zeros((6, 2)), 1.0), straight_path(), params)


def test_initial_state_continuity_with_tight_prior():
    params = VehicleParams()
    path = straight_path(length=200.0)
    T = params.N * params.T_s
    z0 = np.array([10.0, 0.5, 0.05, 9.0, 0.3, 0.02, 10.0])
    prior = build_prior(z0, params, T, PriorConfig(pos_std=1e-6, vel_std=1e-6, acc_std=1e-6))
    rng = np.random.default_rng(14)
    means = np.stack([10.0 + 9.0 * np.arange(31) * 0.1, 0.5 + rng.normal(0, 0.3, 31)], axis=1)
    covs = np.tile(0.25 * np.eye(2), (31, 1, 1))
    post = blr_fit(ModePrediction(0, 1.0, means, covs), prior, T)
    traj = bezier_to_trajectory(BezierCurve.from_flat(post.mean, T), path, params, z0=z0)
    np.testing.assert_allclose(traj.states[0, :2], z0[:2], atol=1e-4)
    assert traj.states[0, 2] == pytest.approx(z0[2], abs=1e-3)
    assert traj.states[0, 3] == pytest.approx(z0[3], abs=1e-3)


# ------------------------------------------------------------- softmin


def test_softmin_equal_costs_arithmetic_mean():
    cands = np.arange(36.0).reshape(3, 12)
    out = cost_weighted_average(cands, [5.0, 5.0, 5.0], lam=2.0)
    np.testing.assert_allclose(out, cands.mean(axis=0), atol=1e-12)


def test_softmin_large_lambda_selects_minimum():
    cands = np.stack([np.zeros(12), np.ones(12), 2 * np.ones(12)])
    out = cost_weighted_average(cands, [3.0, 1.0, 4.0], lam=50.0)
    np.testing.assert_allclose(out, cands[1], atol=1e-12)


def test_softmin_two_candidate_values():
    w = softmin_weights([0.0, 2.0], lam=1.0)
    np.testing.assert_allclose(w, [0.88079707797788, 0.11920292202211], atol=1e-10)


def test_softmin_weights_properties():
    rng = np.random.default_rng(15)
    for _ in range(20):
        costs = rng.normal(0, 50, 9)
        lam = float(rng.uniform(0.01, 10))
        w = softmin_weights(costs, lam)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert w.min() >= 0.0 and w.max() <= 1.0
        w_shifted = softmin_weights(costs + 123.456, lam)
        np.testing.assert_allclose(w, w_shifted, atol=1e-12)


def test_softmin_convex_hull_property():
    rng = np.random.default_rng(16)
    cands = rng.normal(0, 5, (8, 12))
    out = cost_weighted_average(cands, rng.normal(0, 2, 8), lam=1.3)
    assert np.all(out <= cands.max(axis=0) + 1e-12)
    assert np.all(out >= cands.min(axis=0) - 1e-12)


def test_softmin_rejects_non_finite():
    with pytest.raises(NonFiniteCost):
        softmin_weights([1.0, np.nan], lam=1.0)
