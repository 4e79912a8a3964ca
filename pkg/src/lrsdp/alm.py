"""First stage: low-rank augmented Lagrangian with L-BFGS and exact line search.

The penalized Lagrangian over the factor R (X = R R^T) is

    L(R, lam) = <C, RR^T> + <A(RR^T) - b, lam> + (rho/2) ||A(RR^T) - b||^2.

Each inner solve minimizes L for fixed lam with a two-loop L-BFGS direction
and a closed-form exact line search: restricted to a ray R + t*D, L is a
quartic in t whose stationary points solve a cubic. The outer loop ascends
the dual, lam <- lam + rho*(A(RR^T) - b), and escalates rho when the primal
residual stalls.

All constraint evaluations go through the compressed operators; along a ray
the constraint values update as A((R+tD)(R+tD)^T) = A(RR^T) + t*q1 + t^2*q2,
so one gradient and three fused products per accepted step suffice.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergedError
from .linops import spmm

_REFRESH_EVERY = 50     # recompute cached constraint values from scratch
_CURVATURE_MIN = 0.0    # pairs with <y, s> <= this are discarded


@dataclass
class FactorPair:
    """Low-rank iterate. The first stage keeps left and right as one array."""

    left: np.ndarray
    right: np.ndarray

    @classmethod
    def symmetric(cls, R):
        return cls(left=R, right=R)

    @property
    def n(self):
        return self.left.shape[0]

    @property
    def r(self):
        return self.left.shape[1]

    @property
    def is_symmetric(self):
        return self.right is self.left

    def check(self):
        if self.left.shape != self.right.shape:
            raise ValueError("left and right factors must share a shape")
        if self.r < 1:
            raise ValueError("rank must be at least 1")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("factor entries must be finite")


@dataclass
class DualVector:
    """Multiplier plus the current penalty."""

    lam: np.ndarray
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("penalty must be positive")


class LbfgsHistory:
    """Ring of (s, y, 1/<y,s>) curvature pairs; rejects non-positive curvature."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.pairs = deque(maxlen=capacity)

    def push(self, s, y):
        ys = float(np.sum(y * s))
        if ys > _CURVATURE_MIN:
            self.pairs.append((s, y, 1.0 / ys))
            return True
        return False

    def clear(self):
        self.pairs.clear()

    def __len__(self):
        return len(self.pairs)


def lbfgs_direction(g, hist: LbfgsHistory):
    """Two-loop recursion with identity seed; empty history gives -g."""
    D = -g.copy()
    alphas = []
    for s, y, beta in reversed(hist.pairs):
        a = beta * float(np.sum(s * D))
        D -= a * y
        alphas.append(a)
    for (s, y, beta), a in zip(hist.pairs, reversed(alphas)):
        D += (a - beta * float(np.sum(y * D))) * s
    return D


@dataclass
class LineSearchPoly:
    """Quartic restriction of the Lagrangian to a ray, minus its constant.

    phi(t) = a1 t^4 + a2 t^3 + a3 t^2 + a4 t  equals  L(R + tD) - L(R).
    """

    a1: float
    a2: float
    a3: float
    a4: float
    p1: float
    p2: float
    q0: np.ndarray
    q1: np.ndarray
    q2: np.ndarray

    def value(self, t):
        return ((self.a1 * t + self.a2) * t + self.a3) * t * t + self.a4 * t

    def coeffs(self):
        return (self.a1, self.a2, self.a3, self.a4)


def line_search_poly(R, D, dual: DualVector, ops, scale=1.0,
                     ax=None, CR=None, CD=None) -> LineSearchPoly:
    """Quartic coefficients of the exact line search along D.

    The coefficient algebra is written for the b - A(X) convention of the
    Lagrangian; under our A(X) - b convention the multiplier enters negated.
    """
    cop, c_mat, b = ops.cop, ops.c_mat, ops.problem.b
    if ax is None:
        ax = cop.apply_pair(R, R)
    if CR is None:
        CR = spmm(c_mat, R)
    if CD is None:
        CD = spmm(c_mat, D)
    rho = dual.rho
    lam_neg = -dual.lam

    q0 = b - ax
    q1 = cop.apply(cop.outer_product(R, D) + cop.outer_product(D, R))
    q2 = cop.apply_pair(D, D)
    p1 = scale * float(np.sum(CD * R) + np.sum(CR * D))
    p2 = scale * float(np.sum(CD * D))

    w = lam_neg + rho * q0
    a1 = 0.5 * rho * float(np.dot(q2, q2))
    a2 = rho * float(np.dot(q1, q2))
    a3 = p2 - float(np.dot(w, q2)) + 0.5 * rho * float(np.dot(q1, q1))
    a4 = p1 - float(np.dot(w, q1))
    return LineSearchPoly(a1=a1, a2=a2, a3=a3, a4=a4, p1=p1, p2=p2, q0=q0, q1=q1, q2=q2)


def _real_cubic_roots(c3, c2, c1, c0):
    """Real roots of c3 t^3 + c2 t^2 + c1 t + c0 via the depressed cubic."""
    b2, b1, b0 = c2 / c3, c1 / c3, c0 / c3
    shift = b2 / 3.0
    P = b1 - b2 * b2 / 3.0
    Q = b0 - b2 * b1 / 3.0 + 2.0 * b2 ** 3 / 27.0
    disc = -4.0 * P ** 3 - 27.0 * Q ** 2
    if abs(P) < 1e-300 and abs(Q) < 1e-300:
        roots = [0.0]
    elif disc > 0.0:
        # three real roots, trigonometric form (requires P < 0)
        mfac = 2.0 * math.sqrt(-P / 3.0)
        arg = 3.0 * Q / (P * mfac)
        arg = min(1.0, max(-1.0, arg))
        theta = math.acos(arg) / 3.0
        roots = [mfac * math.cos(theta - 2.0 * math.pi * k / 3.0) for k in range(3)]
    else:
        # one real root, Cardano
        half_q = -0.5 * Q
        rad = math.sqrt(max(0.0, Q * Q / 4.0 + P ** 3 / 27.0))
        u = math.copysign(abs(half_q + rad) ** (1.0 / 3.0), half_q + rad)
        v = math.copysign(abs(half_q - rad) ** (1.0 / 3.0), half_q - rad)
        roots = [u + v]
    out = []
    for t in roots:
        x = t - shift
        # a Newton polish tightens the closed form against cancellation
        for _ in range(2):
            f = ((c3 * x + c2) * x + c1) * x + c0
            df = (3.0 * c3 * x + 2.0 * c2) * x + c1
            if df != 0.0 and math.isfinite(f) and math.isfinite(df):
                x -= f / df
        out.append(x)
    return out


def best_step(poly: LineSearchPoly):
    """Minimizer of the ray quartic; returns (t, zero_direction).

    With a positive leading coefficient the minimizer is a real root of the
    derivative cubic; degenerate leading coefficients cascade down to the
    quadratic, linear and constant cases. Ties within 1e-12 prefer the
    smallest magnitude, then the positive sign.
    """
    a1, a2, a3, a4 = poly.coeffs()
    if a1 == 0.0 and a2 == 0.0 and a3 == 0.0 and a4 == 0.0:
        return 0.0, True
    if a1 != 0.0:
        candidates = _real_cubic_roots(4.0 * a1, 3.0 * a2, 2.0 * a3, a4)
        candidates.append(0.0)
    elif a2 != 0.0:
        # cubic objective: keep stationary points that are local minima
        disc = a3 * a3 - 3.0 * a2 * a4
        candidates = [0.0]
        if disc >= 0.0:
            for sgn in (+1.0, -1.0):
                t = (-a3 + sgn * math.sqrt(disc)) / (3.0 * a2)
                if 6.0 * a2 * t + 2.0 * a3 > 0.0:
                    candidates.append(t)
    elif a3 != 0.0:
        candidates = [-a4 / (2.0 * a3)] if a3 > 0.0 else [0.0]
    else:
        # pure linear term: no stationary point on the ray
        candidates = [0.0]

    vals = [poly.value(t) if math.isfinite(t) else math.inf for t in candidates]
    vmin = min(vals)
    tol = 1e-12 * (1.0 + abs(vmin))
    tied = [t for t, v in zip(candidates, vals) if v <= vmin + tol]
    tied.sort(key=lambda t: (abs(t), -t))
    return tied[0], False


def alm_gradient(R, dual: DualVector, ops, scale=1.0, ax=None):
    """2 S R with S = scale*C + adjoint(lam + rho*(A(RR^T) - b))."""
    if ax is None:
        ax = ops.cop.apply_pair(R, R)
    w = dual.lam + dual.rho * (ax - ops.problem.b)
    S = ops.adj.assemble(lam=w, c_coeff=scale)
    return 2.0 * spmm(S, R)


def alm_value(R, dual: DualVector, ops, scale=1.0, ax=None, CR=None):
    """Penalized Lagrangian value at R."""
    if ax is None:
        ax = ops.cop.apply_pair(R, R)
    if CR is None:
        CR = spmm(ops.c_mat, R)
    resid = ax - ops.problem.b
    return (scale * float(np.sum(CR * R)) + float(np.dot(dual.lam, resid))
            + 0.5 * dual.rho * float(np.dot(resid, resid)))


@dataclass
class InnerResult:
    R: np.ndarray
    iterations: int
    grad_norms: list
    hit_cap: bool
    ax: np.ndarray


def alm_inner(R, dual: DualVector, ops, *, scale=1.0, tol=1e-8, max_iter=500,
              reduce_factor=None, lbfgs_memory=8, recorder=None) -> InnerResult:
    """Minimize the Lagrangian over R for fixed multipliers.

    Stops when ||grad||_F / (1 + |L|) <= tol, or, if ``reduce_factor`` is
    given, already when the gradient norm has dropped by that factor from its
    starting value (the inexact solves the outer loop wants: the relative
    form alone goes vacuous when the penalty term inflates |L|). Raises
    DivergedError (carrying the last finite iterate) on non-finite values.
    """
    cop, c_mat, b = ops.cop, ops.c_mat, ops.problem.b
    R = np.array(R, copy=True)
    ax = cop.apply_pair(R, R)
    CR = spmm(c_mat, R)
    hist = LbfgsHistory(lbfgs_memory)
    g = alm_gradient(R, dual, ops, scale=scale, ax=ax)
    L = alm_value(R, dual, ops, scale=scale, ax=ax, CR=CR)
    if not (np.isfinite(L) and np.all(np.isfinite(g))):
        raise DivergedError("non-finite Lagrangian at inner start", last_iterate=R)

    gnorm0 = float(np.linalg.norm(g))
    grad_norms = []
    iterations = 0
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        grad_norms.append(gnorm)
        if gnorm / (1.0 + abs(L)) <= tol:
            return InnerResult(R, iterations, grad_norms, False, ax)
        if reduce_factor is not None and gnorm <= reduce_factor * gnorm0:
            return InnerResult(R, iterations, grad_norms, False, ax)

        D = lbfgs_direction(g, hist)
        CD = spmm(c_mat, D)
        poly = line_search_poly(R, D, dual, ops, scale=scale, ax=ax, CR=CR, CD=CD)
        tau, zero_dir = best_step(poly)
        if zero_dir or tau == 0.0:
            return InnerResult(R, iterations, grad_norms, False, ax)

        R = R + tau * D
        ax = ax + tau * poly.q1 + tau * tau * poly.q2
        CR = CR + tau * CD
        if (it + 1) % _REFRESH_EVERY == 0:
            ax = cop.apply_pair(R, R)
            CR = spmm(c_mat, R)

        g_new = alm_gradient(R, dual, ops, scale=scale, ax=ax)
        L = alm_value(R, dual, ops, scale=scale, ax=ax, CR=CR)
        if not (np.isfinite(L) and np.all(np.isfinite(g_new))):
            raise DivergedError("inner iteration diverged", last_iterate=R)
        hist.push(tau * D, g_new - g)
        g = g_new
        iterations = it + 1
        if recorder is not None:
            err1 = float(np.linalg.norm(ax - b)) / (1.0 + ops.problem.b_norm1)
            recorder.record("alm", L, err1, gnorm, dual.rho, R.shape[1])

    return InnerResult(R, iterations, grad_norms, True, ax)


@dataclass
class AlmResult:
    R: np.ndarray
    outer_iterations: int
    inner_iterations: int
    err1: float
    ax: np.ndarray
    hit_deadline: bool = False


def alm_outer(R, dual: DualVector, ops, *, scale=1.0, switch_threshold=1e-3,
              outer_cap=50, inner_cap=500, inner_tol_floor=1e-8, lbfgs_memory=8,
              rho_growth=2.0, rho_max=1e8, escalate=None, recorder=None,
              deadline=None) -> AlmResult:
    """Alternate inner minimization with dual ascent until the primal
    residual drops below the stage-switch threshold.

    The threshold, the inner tolerance schedule, and the penalty stall test
    all use the infinity-normalized primal measure ||A(RR^T) - b|| /
    (1 + ||b||_inf), the same family as the solver's primal stop; the 1-norm
    form goes vacuously small on instances with many constraints.
    """
    import time

    cop, b = ops.cop, ops.problem.b
    b_norm1 = ops.problem.b_norm1
    b_norminf = ops.problem.b_norminf
    ax = cop.apply_pair(R, R)
    pmeas = float(np.linalg.norm(ax - b)) / (1.0 + b_norminf)
    inner_total = 0
    cap_streak = 0
    outer = 0
    hit_deadline = False

    while pmeas > switch_threshold and outer < outer_cap:
        if deadline is not None and time.perf_counter() > deadline:
            hit_deadline = True
            break
        reduce = max(1e-4, min(1e-2, 0.1 * pmeas))
        inner = alm_inner(R, dual, ops, scale=scale, tol=inner_tol_floor,
                          max_iter=inner_cap, reduce_factor=reduce,
                          lbfgs_memory=lbfgs_memory, recorder=recorder)
        R, ax = inner.R, inner.ax
        inner_total += inner.iterations
        resid = ax - b
        dual.lam = dual.lam + dual.rho * resid
        new_pmeas = float(np.linalg.norm(resid)) / (1.0 + b_norminf)
        if new_pmeas > 0.9 * pmeas:
            dual.rho = min(dual.rho * rho_growth, rho_max)
        pmeas = new_pmeas
        outer += 1

        cap_streak = cap_streak + 1 if inner.hit_cap else 0
        if cap_streak >= 2 and escalate is not None:
            R_new = escalate(R)
            if R_new is not None:
                R = R_new
                ax = cop.apply_pair(R, R)
            cap_streak = 0

    err1 = float(np.linalg.norm(ax - b)) / (1.0 + b_norm1)
    return AlmResult(R=R, outer_iterations=outer, inner_iterations=inner_total,
                     err1=err1, ax=ax, hit_deadline=hit_deadline)
