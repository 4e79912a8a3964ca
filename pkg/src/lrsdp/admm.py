"""Second stage: splitting ADMM on the pair factorization X = U V^T.

The coupled Lagrangian adds a (rho/2)||U - V||^2 penalty, so each half-step
is an unconstrained quadratic whose normal equations

    rho * adjoint(A(U V^T)) V + rho U = -C V - adjoint(lam) V + rho adjoint(b) V + rho V

are symmetric positive definite (rho > 0) and solved matrix-free by conjugate
gradients. The V half-step is the same system with the roles of U and V
swapped (constraint matrices are symmetric, so A(U V^T) = A(V U^T)). After
both half-solves the multiplier ascends: lam <- lam + rho*(A(U V^T) - b).

The operator application never forms U V^T: one gathered outer product, one
sparse mat-vec, one support-aligned adjoint wrap, one sparse-dense product.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .alm import DualVector
from .exceptions import DivergedError, SpdViolationError
from .linops import spmm


@dataclass
class CgWorkspace:
    """Tolerance, cap, and the buffers of the last solve (for inspection)."""

    eps: float
    max_iter: int
    residual: np.ndarray | None = None
    direction: np.ndarray | None = None
    op_output: np.ndarray | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("CG tolerance must be positive")


def subproblem_apply(W, W_fixed, rho, ops):
    """SPD operator of a half-step system: rho*(adjoint(A(W W_fixed^T)) W_fixed + W)."""
    y = ops.cop.apply_pair(W, W_fixed)
    S = ops.adj.assemble(lam=y, c_coeff=0.0)
    return rho * (spmm(S, W_fixed) + W)


def subproblem_rhs(W_fixed, dual: DualVector, ops, scale=1.0, S_b=None):
    """Right-hand side of a half-step system.

    S_b collects the factor-independent part -scale*C - adjoint(lam)
    + rho*adjoint(b); it only changes when the multiplier does, so callers
    solving both halves pass it in once.
    """
    rho = dual.rho
    if S_b is None:
        S_b = ops.adj.assemble(lam=-dual.lam, extra=rho * ops.problem.b, c_coeff=-scale)
    return spmm(S_b, W_fixed) + rho * W_fixed


def cg_solve(x0, apply_op, rhs, ws: CgWorkspace):
    """Conjugate gradients on matrix iterates, Frobenius inner products.

    Returns (x, iterations, final residual norm). Raises SpdViolationError on
    a non-positive curvature direction and DivergedError on non-finite values.
    """
    x = np.array(x0, copy=True)
    r = rhs - apply_op(x)
    rnorm = float(np.linalg.norm(r))
    if rnorm <= ws.eps:
        ws.residual = r
        return x, 0, rnorm
    p = r.copy()
    qr = float(np.sum(r * r))
    iterations = 0
    for k in range(ws.max_iter):
        Q = apply_op(p)
        pq = float(np.sum(p * Q))
        if not np.isfinite(pq):
            raise DivergedError("CG produced non-finite curvature", last_iterate=x)
        if pq <= 0.0:
            raise SpdViolationError(f"non-positive curvature {pq:.3e} in CG (operator not SPD)")
        alpha = qr / pq
        x += alpha * p
        r -= alpha * Q
        qr_new = float(np.sum(r * r))
        rnorm = float(np.sqrt(qr_new))
        iterations = k + 1
        if rnorm <= ws.eps:
            break
        beta = qr_new / qr
        p = r + beta * p
        qr = qr_new
    if not np.all(np.isfinite(x)):
        raise DivergedError("CG iterate diverged", last_iterate=x)
    ws.residual, ws.direction, ws.op_output = r, p, None
    return x, iterations, rnorm


@dataclass
class AdmmState:
    """Factor halves, shared dual, and the cached constraint values."""

    U: np.ndarray
    V: np.ndarray
    dual: DualVector
    ax: np.ndarray | None = None

    def set_factors(self, U=None, V=None):
        if U is not None:
            self.U = U
        if V is not None:
            self.V = V
        self.ax = None

    def constraint_values(self, ops):
        """A(U V^T), refreshed on demand after factor writes."""
        if self.ax is None:
            self.ax = ops.cop.apply_pair(self.U, self.V)
        return self.ax


@dataclass
class StepStats:
    cg_iters_u: int
    cg_iters_v: int
    resid_u: float
    resid_v: float
    hit_cap: bool


def admm_step(state: AdmmState, ops, *, scale=1.0, cg_cap=200,
              cg_rel_floor=1e-10, cg_primal_coeff=0.05) -> StepStats:
    """One U half-solve, one V half-solve, one dual ascent.

    The CG tolerance tracks the infinity-normalized primal measure (the stop
    target), keeping early solves loose and tightening as the primal
    converges.
    """
    dual = state.dual
    rho = dual.rho
    b = ops.problem.b
    ax = state.constraint_values(ops)
    pmeas = float(np.linalg.norm(ax - b)) / (1.0 + ops.problem.b_norminf)
    rel = max(cg_rel_floor, min(1e-2, cg_primal_coeff * pmeas))

    S_b = ops.adj.assemble(lam=-dual.lam, extra=rho * b, c_coeff=-scale)

    rhs_u = spmm(S_b, state.V) + rho * state.V
    ws_u = CgWorkspace(eps=max(rel * float(np.linalg.norm(rhs_u)), 1e-300), max_iter=cg_cap)
    U, it_u, res_u = cg_solve(state.U, lambda W: subproblem_apply(W, state.V, rho, ops),
                              rhs_u, ws_u)
    state.set_factors(U=U)

    rhs_v = spmm(S_b, U) + rho * U
    ws_v = CgWorkspace(eps=max(rel * float(np.linalg.norm(rhs_v)), 1e-300), max_iter=cg_cap)
    V, it_v, res_v = cg_solve(state.V, lambda W: subproblem_apply(W, U, rho, ops),
                              rhs_v, ws_v)
    state.set_factors(V=V)

    ax = state.constraint_values(ops)
    dual.lam = dual.lam + rho * (ax - b)
    hit_cap = (it_u >= cg_cap and res_u > ws_u.eps) or (it_v >= cg_cap and res_v > ws_v.eps)
    return StepStats(cg_iters_u=it_u, cg_iters_v=it_v, resid_u=res_u, resid_v=res_v,
                     hit_cap=hit_cap)


@dataclass
class AdmmResult:
    steps: int
    err1: float
    primal_scaled_inf: float
    cg_iterations: int
    hit_deadline: bool
    hit_cap: bool
    stalled: bool = False
    gap: float | None = None


def admm_run(state: AdmmState, ops, *, scale=1.0, eps=1e-5, gap_eps=None,
             min_steps=0, step_cap=20000, cg_cap=200, rho_balance_mu=10.0,
             rho_balance_tau=2.0, rho_balance_every=5, rho_min=1e-6,
             rho_max=1e8, stall_window=60, stall_ratio=0.995,
             escalate=None, recorder=None, deadline=None) -> AdmmResult:
    """Iterate ADMM steps until the stop criterion fires.

    The stop is always primal, ||A(UV^T) - b|| / (1 + ||b||_inf) <= eps; with
    ``gap_eps`` set, the normalized primal-dual gap must also drop below it,
    which is what actually converges the multiplier. When the primal test
    holds but the gap stops improving for ``stall_window`` consecutive steps
    the run returns with ``stalled=True`` so the driver can re-balance by
    re-optimization.

    The penalty is adapted by residual balancing: when the primal residual
    dominates the dual-residual surrogate rho*(||dU|| + ||dV||) by a factor
    ``rho_balance_mu`` the penalty doubles, in the opposite case it halves.
    A grow-only schedule oscillates here: near feasibility every step looks
    like a stall, the penalty races to its cap and the iteration thrashes.
    """
    p = ops.problem
    b, b1, binf = p.b, p.b_norm1, p.b_norminf

    def measures():
        resid = state.constraint_values(ops) - b
        pnorm = float(np.linalg.norm(resid))
        return pnorm, pnorm / (1.0 + b1), pnorm / (1.0 + binf)

    def gap():
        # reported-form gap: unscaled objective against the sign-flipped,
        # unscaled multiplier
        obj = ops.objective_value(state.U, state.V)
        lam_b = float(np.dot(-state.dual.lam / scale, b))
        return abs(obj - lam_b) / (1.0 + abs(obj) + abs(lam_b))

    pnorm, err1, p0 = measures()
    g3 = gap() if gap_eps is not None else None
    if p0 <= eps and (gap_eps is None or g3 < gap_eps) and min_steps == 0:
        return AdmmResult(steps=0, err1=err1, primal_scaled_inf=p0, cg_iterations=0,
                          hit_deadline=False, hit_cap=False, gap=g3)

    cg_total = 0
    cap_streak = 0
    steps = 0
    hit_deadline = False
    stalled = False
    gap_hist = deque(maxlen=stall_window)
    for step in range(1, step_cap + 1):
        if deadline is not None and time.perf_counter() > deadline:
            hit_deadline = True
            break
        U_prev, V_prev = state.U, state.V
        stats = admm_step(state, ops, scale=scale, cg_cap=cg_cap)
        cg_total += stats.cg_iters_u + stats.cg_iters_v
        steps = step
        pnorm, err1, p0 = measures()
        g3 = gap() if gap_eps is not None else None
        if recorder is not None:
            obj = scale * float(np.sum(spmm(ops.c_mat, state.V) * state.U))
            recorder.record("admm", obj, err1, max(stats.resid_u, stats.resid_v),
                            state.dual.rho, state.U.shape[1])
        if p0 <= eps and (gap_eps is None or g3 < gap_eps) and step >= min_steps:
            break
        if gap_eps is not None and p0 <= eps:
            gap_hist.append(g3)
            if len(gap_hist) == stall_window and gap_hist[-1] > stall_ratio * gap_hist[0]:
                stalled = True
                break
        else:
            gap_hist.clear()
        if step % rho_balance_every == 0:
            dual_surrogate = state.dual.rho * (
                float(np.linalg.norm(state.U - U_prev))
                + float(np.linalg.norm(state.V - V_prev)))
            if pnorm > rho_balance_mu * dual_surrogate:
                state.dual.rho = min(state.dual.rho * rho_balance_tau, rho_max)
            elif dual_surrogate > rho_balance_mu * pnorm:
                state.dual.rho = max(state.dual.rho / rho_balance_tau, rho_min)
        cap_streak = cap_streak + 1 if stats.hit_cap else 0
        if cap_streak >= 2 and escalate is not None:
            pair = escalate(state.U, state.V)
            if pair is not None:
                state.set_factors(U=pair[0], V=pair[1])
            cap_streak = 0

    return AdmmResult(steps=steps, err1=err1, primal_scaled_inf=p0, cg_iterations=cg_total,
                      hit_deadline=hit_deadline, hit_cap=cap_streak > 0, stalled=stalled,
                      gap=g3)
