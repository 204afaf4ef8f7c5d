"""SQP solver for the contouring-control NLP, with warmstart support.

Multiple-shooting formulation over the stacked trajectory [Z, U]: linearized
RK4 dynamics enter as equality constraints (eliminated by condensing onto the
input space), inequality residuals keep an L1 exact penalty, and the step is
computed by a dense active-set QP (module qp).  A backtracking line search on
the L1 merit accepts iterates; the penalty weight escalates when violation
stalls.  Termination maps onto three outcomes: converged (feasible and
stationary), out of budget (wall clock or iteration cap), or stationary but
infeasible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import mpcc as _mpcc
from . import vehicle as _veh
from .mpcc import MpccProblem, max_violation
from .qp import solve_l1_qp
from .vehicle import INPUT_DIM, ITHETA, IV, IVP, STATE_DIM, Trajectory


class DimensionMismatch(ValueError):
    """Initial guess shapes do not match the problem horizon."""


class NonFiniteGuess(ValueError):
    """Initial guess contains NaN or infinite entries."""


class SolveStatus(Enum):
    SUCCESS = "success"
    MAX_TIME_EXCEEDED = "max_time_exceeded"
    CONVERGED_TO_INFEASIBLE = "converged_to_infeasible"


@dataclass
class SolverConfig:
    t_max_s: float = 0.5
    max_iterations: int = 40
    tol_stationarity: float = 1e-4
    tol_feasibility: float = 1e-6
    penalty_initial: float = 50.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e7
    step_tol: float = 1e-9
    armijo: float = 1e-4
    ls_min_alpha: float = 2.0**-13
    hessian_reg: float = 1e-8
    qp_max_iter: int = 200

    def __post_init__(self):
        if self.t_max_s < 0:
            raise ValueError("t_max_s must be >= 0")


@dataclass
class SolveResult:
    status: SolveStatus
    trajectory: Trajectory
    cost: float
    max_violation: float
    iterations: int
    solve_time: float
    stationarity: float = np.inf
    penalty: float = 0.0
    merit_trace: list = field(default_factory=list)  # (merit, penalty) per accepted iterate


def constant_speed_guess(problem: MpccProblem) -> Trajectory:
    """Cold-start guess: hold the current speed, zero inputs, matching v_p."""
    N = problem.params.N
    inputs = np.zeros((N, INPUT_DIM))
    inputs[:, IVP] = max(problem.z0[IV], 0.0)
    states = _veh.rollout_array(problem.z0, inputs, problem.params)
    return Trajectory(states, inputs)


def shift_previous(prev: Trajectory, problem: MpccProblem) -> Trajectory:
    """Conventional warmstart: drop stage 0, duplicate the last input, re-roll.

    The re-rollout from the measured initial state makes the shifted guess
    dynamically consistent (zero defects) for the solver.
    """
    inputs = np.vstack([prev.inputs[1:], prev.inputs[-1:]])
    states = _veh.rollout_array(problem.z0, inputs, problem.params)
    return Trajectory(states, inputs)


def _defects(Z, U, params) -> np.ndarray:
    return Z[1:] - _veh.step_array(Z[:-1], U, params)


def _merit_terms(Z, U, problem):
    """Cost, inequality residuals, dynamics defects at a trial point."""
    cost, resid = _mpcc.evaluate(Z, U, problem)
    defects = _defects(Z, U, problem.params)
    return cost, resid, defects


def _merit(cost, resid, defects, mu) -> float:
    return cost + mu * (np.abs(defects).sum() + np.maximum(0.0, -resid).sum())


def _condense(bundle, A_dyn, B_dyn, defects, N):
    """Sensitivities of the state steps w.r.t. the stacked inputs.

    Returns S (N+1, 7, 3N) and the defect-annihilation shift e (N+1, 7) such
    that the linearized dynamics give d_z = S @ d_u + e for any d_u.
    """
    nu = INPUT_DIM * N
    S = np.zeros((N + 1, STATE_DIM, nu))
    e = np.zeros((N + 1, STATE_DIM))
    for k in range(N):
        S[k + 1] = A_dyn[k] @ S[k]
        S[k + 1][:, INPUT_DIM * k:INPUT_DIM * (k + 1)] += B_dyn[k]
        e[k + 1] = A_dyn[k] @ e[k] - defects[k]
    return S, e


def solve(problem: MpccProblem, initial_guess: Trajectory, config: SolverConfig) -> SolveResult:
    """Solve the contouring NLP from a warmstart; returns the best iterate found."""
    t0 = time.perf_counter()
    N = problem.params.N
    if initial_guess.states.shape != (N + 1, STATE_DIM) or initial_guess.inputs.shape != (N, INPUT_DIM):
        raise DimensionMismatch(
            f"guess shapes {initial_guess.states.shape}/{initial_guess.inputs.shape} "
            f"do not match horizon N={N}"
        )
    if not (np.isfinite(initial_guess.states).all() and np.isfinite(initial_guess.inputs).all()):
        raise NonFiniteGuess("initial guess contains non-finite entries")

    Z = initial_guess.states.copy()
    U = initial_guess.inputs.copy()
    Z[0] = problem.z0  # initial-state constraint
    Z[:, ITHETA] = np.clip(Z[:, ITHETA], 0.0, problem.path.theta_max)

    mu = config.penalty_initial
    best = None  # (feasible_rank, key, Z, U, cost, viol)
    merit_trace = []
    warm_active = None
    status = SolveStatus.MAX_TIME_EXCEEDED
    stationarity = np.inf
    viol_prev = np.inf
    stall = 0
    it = 0
    cached_eval = None  # (cost, resid, defects) carried over from the accepted trial

    while it < config.max_iterations:
        if cached_eval is None:
            cached_eval = _merit_terms(Z, U, problem)
        cost, resid, defects = cached_eval
        viol = max(max_violation(resid), float(np.abs(defects).max()) if defects.size else 0.0)
        key = (0, cost) if viol <= config.tol_feasibility else (1, viol)
        if best is None or key < best[0]:
            best = (key, Z.copy(), U.copy(), cost, viol)

        if time.perf_counter() - t0 > config.t_max_s:
            status = SolveStatus.MAX_TIME_EXCEEDED
            break
        it += 1

        bundle = _mpcc.cost_and_constraint_derivatives(Trajectory(Z, U), problem)
        A_dyn, B_dyn = _veh.step_jacobians(Z[:-1], U, problem.params)
        S, e = _condense(bundle, A_dyn, B_dyn, defects, N)

        # Condensed quadratic model in the input space (flattened BLAS products).
        nu = INPUT_DIM * N
        Sf = S.reshape(-1, nu)
        HzS = (bundle.Hz @ S).reshape(-1, nu)
        Hred = Sf.T @ HzS
        for k in range(N):
            sl = slice(INPUT_DIM * k, INPUT_DIM * (k + 1))
            Hred[sl, sl] += bundle.Hu[k]
        Hred[np.diag_indices_from(Hred)] += config.hessian_reg * max(1.0, np.trace(Hred) / Hred.shape[0])
        gshift = bundle.gz + (bundle.Hz @ e[:, :, None])[:, :, 0]
        gred = Sf.T @ gshift.reshape(-1) + bundle.gu.reshape(-1)

        Srows = S[bundle.res_stage]  # (m, 7, nu)
        Ared = (bundle.res_dz[:, None, :] @ Srows)[:, 0, :]
        has_u = bundle.res_stage < N
        rows = np.flatnonzero(has_u)
        ucols = INPUT_DIM * bundle.res_stage[rows, None] + np.arange(INPUT_DIM)[None, :]
        np.add.at(Ared, (rows[:, None], ucols), bundle.res_du[rows])
        bred = bundle.resid + (bundle.res_dz * e[bundle.res_stage]).sum(axis=1)

        qp = solve_l1_qp(Hred, gred, Ared, bred, mu, warm_active=warm_active, max_iter=config.qp_max_iter)
        warm_active = np.flatnonzero(qp.state == 1)
        du = qp.x

        # Reduced KKT residual at the current iterate with the QP multipliers.
        grad_red = Sf.T @ bundle.gz.reshape(-1) + bundle.gu.reshape(-1)
        stat_vec = grad_red - Ared.T @ qp.multipliers
        stationarity = float(np.linalg.norm(stat_vec, np.inf)) / max(1.0, float(np.linalg.norm(grad_red, np.inf)))

        if viol <= config.tol_feasibility and stationarity <= config.tol_stationarity:
            status = SolveStatus.SUCCESS
            best = ((0, cost), Z.copy(), U.copy(), cost, viol)
            break

        dZ = (Sf @ du).reshape(N + 1, STATE_DIM) + e
        dU = du.reshape(N, INPUT_DIM)
        if np.linalg.norm(du, np.inf) <= config.step_tol and np.abs(dZ).max() <= 1e-7:
            if viol > config.tol_feasibility and mu < config.penalty_max:
                mu = min(mu * config.penalty_growth, config.penalty_max)
                continue
            status = (SolveStatus.CONVERGED_TO_INFEASIBLE if viol > config.tol_feasibility
                      else SolveStatus.MAX_TIME_EXCEEDED)
            break

        # Predicted merit reduction of the linearized model at the full step.
        lin_resid = bundle.resid + (bundle.res_dz * dZ[bundle.res_stage]).sum(axis=1)
        lin_resid[rows] += (bundle.res_du[rows] * dU[bundle.res_stage[rows]]).sum(axis=1)
        quad = (float((bundle.gz * dZ).sum()) + float((bundle.gu * dU).sum())
                + 0.5 * float((dZ * (bundle.Hz @ dZ[:, :, None])[:, :, 0]).sum())
                + 0.5 * float((dU * (bundle.Hu @ dU[:, :, None])[:, :, 0]).sum()))
        pred = (-quad + mu * np.abs(defects).sum()
                + mu * (np.maximum(0.0, -bundle.resid).sum() - np.maximum(0.0, -lin_resid).sum()))
        pred = max(pred, 0.0)

        phi0 = _merit(cost, resid, defects, mu)
        alpha = 1.0
        accepted = False
        while alpha >= config.ls_min_alpha:
            Zt = Z + alpha * dZ
            Ut = U + alpha * dU
            ct, rt, dt = _merit_terms(Zt, Ut, problem)
            phi = _merit(ct, rt, dt, mu)
            noise = 1e-14 * (1.0 + abs(phi0))  # merit evaluation rounding floor
            if np.isfinite(phi) and phi <= phi0 - config.armijo * alpha * pred + noise:
                Z, U = Zt, Ut
                cached_eval = (ct, rt, dt)
                accepted = True
                merit_trace.append((phi, mu))
                break
            alpha *= 0.5
        if not accepted:
            if mu < config.penalty_max:
                mu = min(mu * config.penalty_growth, config.penalty_max)
                continue
            status = (SolveStatus.CONVERGED_TO_INFEASIBLE if viol > config.tol_feasibility
                      else SolveStatus.MAX_TIME_EXCEEDED)
            break

        # Escalate the penalty when violation stalls across accepted steps.
        viol_new = max(max_violation(rt), float(np.abs(dt).max()) if dt.size else 0.0)
        if viol_new > config.tol_feasibility and viol_new > 0.7 * viol_prev:
            stall += 1
            if stall >= 3:
                mu = min(mu * config.penalty_growth, config.penalty_max)
                stall = 0
        else:
            stall = 0
        viol_prev = viol_new
    else:
        status = SolveStatus.MAX_TIME_EXCEEDED

    _, Zb, Ub, cost_b, viol_b = best
    if status is SolveStatus.SUCCESS:
        assert viol_b <= config.tol_feasibility and stationarity <= config.tol_stationarity
    result = SolveResult(
        status=status,
        trajectory=Trajectory(Zb, Ub),
        cost=cost_b,
        max_violation=viol_b,
        iterations=it,
        solve_time=time.perf_counter() - t0,
        stationarity=stationarity,
        penalty=mu,
        merit_trace=merit_trace,
    )
    if not (np.isfinite(result.trajectory.states).all() and np.isfinite(result.trajectory.inputs).all()):
        raise AssertionError("solver produced a non-finite trajectory")
    return result
