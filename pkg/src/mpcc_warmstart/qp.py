"""Dense active-set solver for the L1-exact-penalty quadratic subproblem.

Minimizes the piecewise-quadratic

    q(x) = 0.5 x'Hx + g'x + mu * sum_i max(0, -(A_i x + b_i))

with H symmetric positive definite.  This is the SQP step computation: the
inequality rows never make the subproblem infeasible, and the multiplier
bound mu cleanly signals constraints the penalty is willing to violate.

Each constraint is tracked in one of three states (satisfied / at the kink /
violated); the solver alternates equality-constrained Newton solves on the
current smooth piece with exact steps to the first kink crossing, and uses
the kink multipliers to decide releases.  Finite termination holds for
nondegenerate problems; an iteration cap guards cycling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAT, ACT, VIO = 0, 1, 2

_KKT_REG = 1e-11
_TOL = 1e-9


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray  # in [0, mu]; mu on violated rows
    iterations: int
    converged: bool
    state: np.ndarray  # per-constraint SAT/ACT/VIO partition at exit


def penalty_objective(x, H, g, A, b, mu) -> float:
    """Value of the piecewise-quadratic objective (used by tests and the SQP merit)."""
    val = 0.5 * x @ H @ x + g @ x
    if b.size:
        val += mu * np.maximum(0.0, -(A @ x + b)).sum()
    return float(val)


def _kkt_solve(H, g_eff, A, b, working):
    """Minimize the smooth model subject to A_W x + b_W = 0; returns x_hat, lam_W."""
    nw = len(working)
    if nw == 0:
        return np.linalg.solve(H, -g_eff), np.zeros(0)
    Aw = A[working]
    n = g_eff.size
    K = np.zeros((n + nw, n + nw))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    K[n:, n:] = -_KKT_REG * np.eye(nw)
    rhs = np.concatenate([-g_eff, -b[working]])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def solve_l1_qp(H, g, A, b, mu, x0=None, warm_active=None, max_iter=300) -> QpResult:
    """Solve the L1-penalty QP; optionally warm-started with an active set."""
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, g.size)
    b = np.asarray(b, dtype=float)
    n, m = g.size, b.size
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    state = np.full(m, SAT, dtype=np.int8)
    if m:
        state[(A @ x + b) < -_TOL] = VIO
    if warm_active is not None:
        for i in warm_active:
            if 0 <= i < m:
                state[i] = ACT

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        working = np.flatnonzero(state == ACT)
        g_eff = g - mu * A[state == VIO].sum(axis=0) if m else g
        x_hat, lam_w = _kkt_solve(H, g_eff, A, b, working)
        p = x_hat - x

        if np.linalg.norm(p, np.inf) <= _TOL * (1.0 + np.linalg.norm(x, np.inf)):
            # Stationary on this piece: re-derive the partition from x, then
            # test the kink multipliers (optimal iff lam in [-mu, 0]).
            vals = A @ x + b if m else np.zeros(0)
            drift_sat = np.flatnonzero((state == SAT) & (vals < -_TOL))
            drift_vio = np.flatnonzero((state == VIO) & (vals > _TOL))
            if drift_sat.size or drift_vio.size:
                state[drift_sat] = VIO
                state[drift_vio] = SAT
                continue
            if working.size:
                hi = int(np.argmax(lam_w))
                lo = int(np.argmin(lam_w))
                if lam_w[hi] > _TOL:
                    state[working[hi]] = SAT
                    continue
                if lam_w[lo] < -mu - _TOL:
                    state[working[lo]] = VIO
                    continue
            converged = True
            break

        # Step to the first kink crossing among non-working constraints.
        alpha = 1.0
        blocker = -1
        if m:
            vals = A @ x + b
            dvals = A @ p
            sat = (state == SAT) & (dvals < -_TOL)
            vio = (state == VIO) & (dvals > _TOL)
            cand = np.flatnonzero(sat | vio)
            if cand.size:
                ratios = -vals[cand] / dvals[cand]
                ratios = np.where(sat[cand], np.maximum(ratios, 0.0), ratios)
                ratios = np.where(vio[cand] & (ratios < 0.0), 0.0, ratios)
                j = int(np.argmin(ratios))
                if ratios[j] < alpha - 1e-14:
                    alpha = max(ratios[j], 0.0)
                    blocker = int(cand[j])
        x = x + alpha * p
        if blocker >= 0:
            state[blocker] = ACT

    multipliers = np.zeros(m)
    if m:
        multipliers[state == VIO] = mu
        working = np.flatnonzero(state == ACT)
        if working.size:
            g_eff = g - mu * A[state == VIO].sum(axis=0)
            _, lam_w = _kkt_solve(H, g_eff, A, b, working)
            multipliers[working] = np.clip(-lam_w, 0.0, mu)
    return QpResult(x, multipliers, it, converged, state)
