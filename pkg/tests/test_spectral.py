"""Smallest-eigenvalue estimation and dual infeasibility tests."""

import numpy as np
import scipy.sparse as sp

from lrsdp.linops import build_operators
from lrsdp.problem import SdpProblem, SymmetricSparse
from lrsdp.spectral import dual_infeasibility, smallest_eigenvalue

from oracles import random_problem


def test_identity_matrix():
    est = smallest_eigenvalue(lambda v: v, n=50, seed=0)
    assert abs(est.value - 1.0) <= 1e-10
    assert est.verified


def test_diagonal_spectrum():
    d = np.array([-2.0, 0.0, 5.0])
    est = smallest_eigenvalue(lambda v: d * v, n=3, seed=0)
    assert abs(est.value + 2.0) <= 1e-10


def test_single_dimension():
    est = smallest_eigenvalue(lambda v: -3.5 * v, n=1, seed=0)
    assert abs(est.value + 3.5) <= 1e-12


def test_random_sparse_matches_dense_eig():
    rng = np.random.default_rng(1)
    n = 200
    A = sp.random(n, n, density=0.05, random_state=rng, format="csr")
    S = A + A.T
    want = float(np.linalg.eigvalsh(S.toarray())[0])
    est = smallest_eigenvalue(lambda v: S @ v, n=n, seed=3)
    assert abs(est.value - want) <= 1e-8 * (1.0 + abs(want))
    assert est.verified


def test_shift_invariance():
    rng = np.random.default_rng(2)
    n = 80
    A = rng.standard_normal((n, n))
    S = A + A.T
    base = smallest_eigenvalue(lambda v: S @ v, n=n, seed=5).value
    for c in rng.standard_normal(3) * 4.0:
        shifted = smallest_eigenvalue(lambda v: S @ v + c * v, n=n, seed=5).value
        assert abs(shifted - (base + c)) <= 1e-8 * (1.0 + abs(base))


def test_fixed_seed_deterministic():
    rng = np.random.default_rng(3)
    n = 60
    A = rng.standard_normal((n, n))
    S = A + A.T
    a = smallest_eigenvalue(lambda v: S @ v, n=n, seed=7)
    b = smallest_eigenvalue(lambda v: S @ v, n=n, seed=7)
    assert a.value == b.value and a.residual == b.residual


def test_ritz_value_upper_bounds_minimum():
    rng = np.random.default_rng(4)
    for trial in range(5):
        n = 150
        A = sp.random(n, n, density=0.08, random_state=rng, format="csr")
        S = A + A.T
        true_min = float(np.linalg.eigvalsh(S.toarray())[0])
        est = smallest_eigenvalue(lambda v: S @ v, n=n, seed=trial, max_basis=40)
        # Ritz values approach from above; the residual bounds the gap
        assert est.value >= true_min - est.residual - 1e-10


def test_dual_infeasibility_psd_is_zero():
    # C - adjoint(lam) psd  =>  err2 = 0 exactly
    p = random_problem(np.random.default_rng(5), 6, 2)
    # replace C with an identity to guarantee psd at lam = 0
    eye = np.arange(6, dtype=np.int64)
    p2 = SdpProblem(n=6, m=2, C=SymmetricSparse(6, eye, eye.copy(), np.ones(6)),
                    a_con=p.a_con, a_row=p.a_row, a_col=p.a_col, a_val=p.a_val,
                    b=p.b)
    ops = build_operators(p2, dense_c=False)
    val, verified, sig = dual_infeasibility(p2, ops, np.zeros(2))
    assert val == 0.0
    assert sig >= -1e-12


def test_dual_infeasibility_scalar_example():
    p = SdpProblem(n=1, m=1, C=SymmetricSparse.from_entries(1, [(0, 0, 1.0)]),
                   a_con=np.array([0]), a_row=np.array([0]), a_col=np.array([0]),
                   a_val=np.array([1.0]), b=np.array([1.0]))
    ops = build_operators(p)
    val, verified, sig = dual_infeasibility(p, ops, np.array([2.0]))
    # sigma_min(C - 2 A) = -1, norm of vec(C) is 1
    assert abs(sig + 1.0) <= 1e-12
    assert abs(val - 0.5) <= 1e-12


def test_dual_infeasibility_triangle_at_dual_optimum():
    from lrsdp.problem import GraphEdgeList, build_maxcut
    p = build_maxcut(GraphEdgeList.from_edges(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]))
    ops = build_operators(p)
    # analytic dual optimum of the triangle relaxation: y = -0.75 per vertex
    lam = -0.75 * np.ones(3)
    val, verified, sig = dual_infeasibility(p, ops, lam)
    assert val <= 1e-6
