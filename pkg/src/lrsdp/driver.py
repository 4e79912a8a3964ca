"""Two-stage solve orchestration, stopping logic, re-optimization, reporting.

Pipeline: build operators, start the factor at a logarithmic rank, run the
augmented-Lagrangian stage until the primal residual crosses the stage-switch
threshold, split the factor into a U/V pair and run ADMM until the primal
stop fires, then settle the remaining criteria by re-optimization rounds:
scale the objective (and the multiplier with it) by a factor < 1 and re-solve
warm-started, which trades a little feasibility work for much better
optimality and dual quality at the same primal tolerance.

Three stopping modes (``reopt_level``):

* 0: primal only, ||A(X) - b|| / (1 + ||b||_inf) <= eps;
* 1: additionally the primal-dual gap, max(err1, err3) < eps;
* 2: additionally dual infeasibility, max(err1, err2, err3) < eps, with err2
  evaluated once per stop candidate (it needs an eigenvalue solve).

All reported errors are recomputed from the final factors against the
original, unscaled objective; the multiplier is unscaled accordingly.
"""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from .alm import DualVector, alm_outer
from .admm import AdmmState, admm_run
from .exceptions import DivergedError, SpdViolationError
from .linops import OperatorBundle, build_operators
from .problem import SdpProblem
from .spectral import dual_infeasibility


@dataclass
class SolverConfig:
    eps: float = 1e-5
    reopt_level: int = 1
    max_reopts: int = 5
    reopt_factor: float = 0.1
    time_limit: float = 10000.0
    rank_init: int | None = None
    lbfgs_memory: int = 8
    switch_threshold: float | None = None   # None: max(100*eps, 1e-3)
    seed: int = 0
    cg_cap: int = 200
    alm_inner_cap: int = 500
    alm_outer_cap: int = 50
    admm_step_cap: int = 20000
    eig_tol: float = 1e-7
    deterministic: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.reopt_factor < 1.0:
            raise ValueError("reopt_factor must lie in (0, 1)")
        if self.reopt_level not in (0, 1, 2):
            raise ValueError("reopt_level must be 0, 1 or 2")

    @property
    def stage_switch(self):
        if self.switch_threshold is not None:
            return self.switch_threshold
        return max(100.0 * self.eps, 1e-3)


@dataclass
class ErrorReport:
    """The three normalized errors plus the raw primal measures."""

    err1: float
    err3: float
    primal_norm: float          # ||A(X) - b||_2
    primal_scaled_inf: float    # ||A(X) - b|| / (1 + ||b||_inf)
    objective: float            # <C, X>, unscaled minimization value
    dual_value: float           # lam . b
    err2: float | None = None
    err2_verified: bool = True
    sigma_min: float | None = None

    def err_max(self):
        vals = [self.err1, self.err3]
        if self.err2 is not None:
            vals.append(self.err2)
        return max(vals)


def compute_errors(U, V, lam, problem: SdpProblem, ops: OperatorBundle, *,
                   want_err2=False, eig_tol=1e-7, seed=0) -> ErrorReport:
    """Errors of a factor pair and multiplier against the unscaled problem."""
    ax = ops.cop.apply_pair(U, V)
    resid = ax - problem.b
    pnorm = float(np.linalg.norm(resid))
    obj = ops.objective_value(U, V)
    lam = np.asarray(lam, dtype=np.float64)
    lam_b = float(np.dot(lam, problem.b))
    err1 = pnorm / (1.0 + problem.b_norm1)
    err3 = abs(obj - lam_b) / (1.0 + abs(obj) + abs(lam_b))
    rep = ErrorReport(err1=err1, err3=err3, primal_norm=pnorm,
                      primal_scaled_inf=pnorm / (1.0 + problem.b_norminf),
                      objective=obj, dual_value=lam_b)
    if want_err2:
        rep.err2, rep.err2_verified, rep.sigma_min = dual_infeasibility(
            problem, ops, lam, tol=eig_tol, seed=seed)
    return rep


def stop_check(errs: ErrorReport, cfg: SolverConfig) -> bool:
    """Level-dependent stopping predicate on already-computed errors."""
    if cfg.reopt_level == 0:
        return errs.primal_scaled_inf <= cfg.eps
    if cfg.reopt_level == 1:
        return max(errs.err1, errs.err3) < cfg.eps
    if errs.err2 is None:
        return False
    return max(errs.err1, errs.err2, errs.err3) < cfg.eps


def needs_err2(errs: ErrorReport, cfg: SolverConfig) -> bool:
    """True when the cheap criteria pass and only err2 remains to evaluate."""
    return (cfg.reopt_level == 2 and errs.err2 is None
            and max(errs.err1, errs.err3) < cfg.eps)


def update_rank(r, m):
    """Escalation rule: r' = min(ceil(1.5 r), ceil(sqrt(2 m)))."""
    return min(math.ceil(1.5 * r), math.ceil(math.sqrt(2.0 * m)))


def initial_rank(m, n, override=None):
    """Logarithmic starting rank, clamped by the escalation cap and n."""
    cap = min(math.ceil(math.sqrt(2.0 * m)), n)
    if override is not None:
        return max(1, min(override, cap))
    r = max(2, math.ceil(math.log2(2.0 * m + 1.0)))
    return max(1, min(r, cap))


class Trace:
    """Per-iteration rows for the CSV trace; converts internal objectives."""

    def __init__(self, t0, maximize):
        self.rows = []
        self.t0 = t0
        self.scale = 1.0
        self.sign = -1.0 if maximize else 1.0
        self.counter = 0

    def record(self, stage, obj_internal, err1, resid_metric, rho, rank):
        self.counter += 1
        obj_user = self.sign * obj_internal / self.scale
        self.rows.append((stage, self.counter, obj_user, err1, resid_metric,
                          rho, rank, time.perf_counter() - self.t0))


@dataclass
class SolveReport:
    status: str
    objective: float
    err1: float
    err2: float | None
    err3: float
    n: int
    m: int
    rank_final: int
    time_total_s: float
    time_alm_s: float
    time_admm_s: float
    reopt_rounds: int
    K: int
    omega_size: int
    peak_bytes: int
    # beyond the frozen JSON schema:
    err2_verified: bool = True
    rank_history: list = field(default_factory=list)
    alm_outer_iterations: int = 0
    alm_inner_iterations: int = 0
    admm_steps: int = 0
    cg_iterations: int = 0
    seed: int = 0
    trace_rows: list = field(default_factory=list)

    SCHEMA_VERSION = 1

    def to_json_dict(self):
        """The frozen report schema (field order is part of the contract)."""
        return {
            "schema_version": self.SCHEMA_VERSION,
            "status": self.status,
            "objective": self.objective,
            "err1": self.err1,
            "err2": self.err2,
            "err3": self.err3,
            "n": self.n,
            "m": self.m,
            "rank_final": self.rank_final,
            "time_total_s": self.time_total_s,
            "time_alm_s": self.time_alm_s,
            "time_admm_s": self.time_admm_s,
            "reopt_rounds": self.reopt_rounds,
            "K": self.K,
            "omega_size": self.omega_size,
            "peak_bytes": self.peak_bytes,
        }


def _peak_bytes():
    if tracemalloc.is_tracing():
        return tracemalloc.get_traced_memory()[1]
    try:
        import resource
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    except Exception:
        return 0


def solve(problem: SdpProblem, cfg: SolverConfig | None = None) -> SolveReport:
    """Run the full two-stage pipeline with re-optimization rounds."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    deadline = t0 + cfg.time_limit
    rng = np.random.default_rng(cfg.seed)

    ops = build_operators(problem)
    n, m = problem.n, problem.m
    rank_cap = min(math.ceil(math.sqrt(2.0 * m)), n)
    r0 = initial_rank(m, n, cfg.rank_init)
    R = rng.standard_normal((n, r0)) / math.sqrt(n * r0)
    rho0 = max(1.0, m / math.sqrt(max(problem.nnz_a_full(), 1)))
    dual = DualVector(lam=np.zeros(m), rho=rho0)

    rank_history = [r0]
    trace = Trace(t0, problem.maximize)
    sign = -1.0 if problem.maximize else 1.0

    def pad(W, r_new):
        extra = rng.standard_normal((n, r_new - W.shape[1])) * (1e-3 / math.sqrt(n))
        return np.hstack([W, extra])

    def escalate_single(W):
        r_new = min(update_rank(W.shape[1], m), rank_cap)
        if r_new <= W.shape[1]:
            return None
        rank_history.append(r_new)
        return pad(W, r_new)

    def escalate_pair(U, V):
        r_new = min(update_rank(U.shape[1], m), rank_cap)
        if r_new <= U.shape[1]:
            return None
        rank_history.append(r_new)
        return pad(U, r_new), pad(V, r_new)

    scale = 1.0
    rounds = 0
    status = "optimal"
    time_alm = 0.0
    time_admm = 0.0
    alm_outer_total = 0
    alm_inner_total = 0
    admm_steps_total = 0
    cg_total = 0
    U = V = R
    errs = None
    diverged = False

    try:
        while True:
            trace.scale = scale
            t_stage = time.perf_counter()
            alm_res = alm_outer(R, dual, ops, scale=scale,
                                switch_threshold=cfg.stage_switch,
                                outer_cap=cfg.alm_outer_cap,
                                inner_cap=cfg.alm_inner_cap,
                                lbfgs_memory=cfg.lbfgs_memory,
                                escalate=escalate_single, recorder=trace,
                                deadline=deadline)
            time_alm += time.perf_counter() - t_stage
            R = alm_res.R
            alm_outer_total += alm_res.outer_iterations
            alm_inner_total += alm_res.inner_iterations

            state = AdmmState(U=R.copy(), V=R.copy(), dual=dual)
            t_stage = time.perf_counter()
            admm_res = admm_run(state, ops, scale=scale, eps=cfg.eps,
                                gap_eps=cfg.eps if cfg.reopt_level >= 1 else None,
                                min_steps=1 if rounds > 0 else 0,
                                step_cap=cfg.admm_step_cap, cg_cap=cfg.cg_cap,
                                escalate=escalate_pair, recorder=trace,
                                deadline=deadline)
            time_admm += time.perf_counter() - t_stage
            U, V = state.U, state.V
            admm_steps_total += admm_res.steps
            cg_total += admm_res.cg_iterations

            # the internal Lagrangian uses +<A(X)-b, lam>; the standard dual
            # of the minimization is its negation, unscaled
            lam_rep = -dual.lam / scale
            errs = compute_errors(U, V, lam_rep, problem, ops,
                                  want_err2=False, eig_tol=cfg.eig_tol, seed=cfg.seed)
            if needs_err2(errs, cfg):
                err2, verified, sig = dual_infeasibility(problem, ops, lam_rep,
                                                         tol=cfg.eig_tol, seed=cfg.seed)
                errs.err2, errs.err2_verified, errs.sigma_min = err2, verified, sig

            if alm_res.hit_deadline or admm_res.hit_deadline or time.perf_counter() > deadline:
                status = "timeout" if not stop_check(errs, cfg) else "optimal"
                break
            if stop_check(errs, cfg):
                status = "optimal"
                break
            if cfg.reopt_level == 0:
                # primal criterion is the only one; unmet means the stage
                # caps ran out
                status = "best_effort"
                break
            if rounds >= cfg.max_reopts:
                status = "best_effort"
                break

            scale *= cfg.reopt_factor
            dual.lam = dual.lam * cfg.reopt_factor
            rounds += 1
            R = 0.5 * (U + V)
    except (DivergedError, SpdViolationError) as exc:
        diverged = True
        status = "diverged"
        last = getattr(exc, "last_iterate", None)
        if last is not None and getattr(last, "ndim", 0) == 2:
            U = V = last

    lam_rep = -dual.lam / scale
    final = compute_errors(U, V, lam_rep, problem, ops, want_err2=False,
                           eig_tol=cfg.eig_tol, seed=cfg.seed)
    if errs is not None and errs.err2 is not None and not diverged:
        # the candidate evaluation already measured err2 for these factors
        final.err2, final.err2_verified, final.sigma_min = (
            errs.err2, errs.err2_verified, errs.sigma_min)
    else:
        err2, verified, sig = dual_infeasibility(problem, ops, lam_rep,
                                                 tol=cfg.eig_tol, seed=cfg.seed)
        final.err2, final.err2_verified, final.sigma_min = err2, verified, sig

    if status == "optimal" and not stop_check(final, cfg):
        status = "best_effort"

    total = time.perf_counter() - t0
    det = cfg.deterministic
    return SolveReport(
        status=status,
        objective=sign * final.objective,
        err1=final.err1,
        err2=final.err2,
        err3=final.err3,
        n=n, m=m,
        rank_final=U.shape[1],
        time_total_s=0.0 if det else total,
        time_alm_s=0.0 if det else time_alm,
        time_admm_s=0.0 if det else time_admm,
        reopt_rounds=rounds,
        K=ops.cop.ncols,
        omega_size=ops.adj.size,
        peak_bytes=0 if det else _peak_bytes(),
        err2_verified=final.err2_verified,
        rank_history=rank_history,
        alm_outer_iterations=alm_outer_total,
        alm_inner_iterations=alm_inner_total,
        admm_steps=admm_steps_total,
        cg_iterations=cg_total,
        seed=cfg.seed,
        trace_rows=trace.rows,
    )
