"""Fused/compressed operator tests against dense oracles."""

import numpy as np
import pytest
import scipy.sparse as sp

from lrsdp.exceptions import DimensionMismatchError
from lrsdp.linops import build_operators, compress, operator_stats, spmm, symmetric_csr
from lrsdp.problem import (GraphEdgeList, ObservationSet, SdpProblem, SymmetricSparse,
                           build_matrix_completion, build_maxcut)

from oracles import dense_adjoint, dense_apply_A, dense_constraints, random_problem, rel_err


def triangle():
    g = GraphEdgeList.from_edges(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)])
    return build_maxcut(g)


def test_compress_triangle_sparse_mode():
    cop, adj = compress(triangle(), dense_c=False)
    assert cop.ncols == 3
    assert np.array_equal(cop.imap, [0, 1, 2])
    assert np.array_equal(cop.jmap, [0, 1, 2])
    # C = -L/4 has full support, so the union support is all 9 positions
    assert adj.size == 9


def test_compress_single_edge_completion():
    o = ObservationSet.from_triples(1, 1, [(0, 0, 5.0)])
    p = build_matrix_completion(o)
    cop, adj = compress(p, dense_c=False)
    assert cop.ncols == 2
    pos = sorted(zip(cop.imap.tolist(), cop.jmap.tolist()))
    assert pos == [(0, 1), (1, 0)]
    sup = sorted(zip(adj.sup_i.tolist(), adj.sup_j.tolist()))
    assert sup == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_compress_identity_constraint():
    eye = np.arange(3, dtype=np.int64)
    p = SdpProblem(n=3, m=1, C=SymmetricSparse.from_entries(3, [(0, 0, 1.0)]),
                   a_con=np.zeros(3, dtype=np.int64), a_row=eye, a_col=eye.copy(),
                   a_val=np.ones(3), b=np.array([1.0]))
    cop, _ = compress(p, dense_c=False)
    assert cop.ncols == 3
    assert np.array_equal(cop.imap, [0, 1, 2])
    assert np.array_equal(cop.jmap, [0, 1, 2])


def test_compressed_columns_sorted_and_unique():
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = random_problem(rng, int(rng.integers(2, 15)), int(rng.integers(1, 6)))
        cop, adj = compress(p, dense_c=False)
        codes = cop.imap * p.n + cop.jmap
        assert np.all(np.diff(codes) > 0)
        # every retained column must carry at least one nonzero
        assert np.all(np.diff(cop.rows.tocsc().indptr) >= 1)


def test_outer_product_diagonal_squares():
    eye = np.arange(2, dtype=np.int64)
    p = SdpProblem(n=2, m=2, C=SymmetricSparse.from_entries(2, [(0, 0, 1.0)]),
                   a_con=eye.copy(), a_row=eye, a_col=eye.copy(),
                   a_val=np.ones(2), b=np.ones(2))
    cop, _ = compress(p, dense_c=False)
    U = np.array([[1.0], [2.0]])
    assert cop.outer_product(U, U).tolist() == [1.0, 4.0]


def test_outer_product_zero_rank():
    cop, _ = compress(triangle(), dense_c=False)
    U = np.zeros((3, 0))
    assert cop.outer_product(U, U).tolist() == [0.0, 0.0, 0.0]


def test_outer_product_matches_dense_gather():
    rng = np.random.default_rng(1)
    p = random_problem(rng, 20, 8, density=0.15)
    cop, _ = compress(p, dense_c=False)
    U = rng.standard_normal((20, 3))
    V = rng.standard_normal((20, 3))
    X = U @ V.T
    want = X[cop.imap, cop.jmap]
    assert rel_err(cop.outer_product(U, V), want) <= 1e-14


def test_apply_pair_trace_example():
    eye = np.arange(2, dtype=np.int64)
    p = SdpProblem(n=2, m=1, C=SymmetricSparse.from_entries(2, [(0, 0, 0.5)]),
                   a_con=np.zeros(2, dtype=np.int64), a_row=eye, a_col=eye.copy(),
                   a_val=np.ones(2), b=np.array([1.0]))
    cop, _ = compress(p, dense_c=False)
    U = np.array([[1.0], [2.0]])
    assert cop.apply_pair(U, U).tolist() == [5.0]


def test_apply_matches_dense():
    rng = np.random.default_rng(2)
    p = random_problem(rng, 15, 8, density=0.2)
    cop, _ = compress(p, dense_c=False)
    mats, _ = dense_constraints(p)
    U = rng.standard_normal((15, 2))
    V = rng.standard_normal((15, 2))
    assert rel_err(cop.apply_pair(U, V), dense_apply_A(mats, U @ V.T)) <= 1e-13


def test_adjoint_maxcut_ones_gives_identity():
    p = triangle()
    cop, adj = compress(p, dense_c=False)
    out = adj.apply(np.ones(3))
    S = sp.csr_matrix((out, adj.csr_indices, adj.csr_indptr), shape=(3, 3)).toarray()
    assert np.allclose(S, np.eye(3))
    assert np.all(adj.apply(np.zeros(3)) == 0.0)


def test_adjoint_matches_dense():
    rng = np.random.default_rng(3)
    p = random_problem(rng, 12, 6, density=0.25)
    cop, adj = compress(p, dense_c=False)
    mats, _ = dense_constraints(p)
    y = rng.standard_normal(6)
    dense = dense_adjoint(mats, y)
    got = np.zeros((12, 12))
    got[adj.sup_i, adj.sup_j] = adj.apply(y)
    assert rel_err(got, dense) <= 1e-13


def test_assemble_identity_and_composites():
    rng = np.random.default_rng(4)
    p = random_problem(rng, 10, 5, density=0.3)
    cop, adj = compress(p, dense_c=False)
    mats, C = dense_constraints(p)
    # lam = 0, no extra term: S must equal C exactly
    S0 = adj.assemble(lam=np.zeros(5)).toarray()
    assert np.array_equal(S0[p.C.rows, p.C.cols], p.C.vals)
    assert rel_err(S0, C) == 0.0
    lam = rng.standard_normal(5)
    rho_b = 3.7 * p.b
    S = adj.assemble(lam=lam, extra=rho_b)
    want = C + dense_adjoint(mats, lam + rho_b)
    assert rel_err(S.toarray(), want) <= 1e-13


def test_assemble_triangle_plus_multiplier():
    p = triangle()
    _, adj = compress(p, dense_c=False)
    S = adj.assemble(lam=np.ones(3)).toarray()
    assert np.allclose(S, p.C.to_dense() + np.eye(3))


def test_assemble_support_coverage():
    rng = np.random.default_rng(5)
    p = random_problem(rng, 14, 4, density=0.2)
    cop, adj = compress(p, dense_c=False)
    mats, C = dense_constraints(p)
    lam = rng.standard_normal(4)
    S = adj.assemble(lam=lam).tocoo()
    allowed = set(zip(adj.sup_i.tolist(), adj.sup_j.tolist()))
    dense = C + dense_adjoint(mats, lam)
    for i, j, v in zip(S.row, S.col, S.data):
        assert (i, j) in allowed
        assert abs(v - dense[i, j]) <= 1e-13 * (1 + abs(dense[i, j]))


def test_spmm_identity_zero_random():
    rng = np.random.default_rng(6)
    V = rng.standard_normal((25, 4))
    I = sp.eye(25, format="csr")
    assert np.array_equal(spmm(I, V), V)
    Z = sp.csr_matrix((25, 25))
    assert np.all(spmm(Z, V) == 0.0)
    S = sp.random(25, 25, density=0.2, random_state=7, format="csr")
    assert rel_err(spmm(S, V), S.toarray() @ V) <= 1e-14
    with pytest.raises(DimensionMismatchError):
        spmm(S, rng.standard_normal((10, 2)))


def test_dimension_mismatch_errors():
    cop, adj = compress(triangle(), dense_c=False)
    with pytest.raises(DimensionMismatchError):
        cop.outer_product(np.zeros((4, 1)), np.zeros((4, 1)))
    with pytest.raises(DimensionMismatchError):
        cop.apply(np.zeros(5))
    with pytest.raises(DimensionMismatchError):
        adj.apply(np.zeros(7))


def test_fusion_equivalence_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 50))
        m = int(rng.integers(1, 12))
        r = int(rng.integers(1, 5))
        p = random_problem(rng, n, m, density=min(0.3, 6.0 / n))
        cop, _ = compress(p, dense_c=False)
        mats, _ = dense_constraints(p)
        U = rng.standard_normal((n, r))
        V = rng.standard_normal((n, r))
        assert rel_err(cop.apply_pair(U, V), dense_apply_A(mats, U @ V.T)) <= 1e-12


def test_adjoint_identity_random():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        m = int(rng.integers(1, 10))
        p = random_problem(rng, n, m, density=min(0.3, 6.0 / n))
        cop, adj = compress(p, dense_c=False)
        x = rng.standard_normal(cop.ncols)
        y = rng.standard_normal(m)
        lhs = float(np.dot(cop.apply(x), y))
        rhs = float(np.dot(x, adj.apply(y)[cop.col_slot]))
        assert abs(lhs - rhs) <= 1e-11 * (1.0 + abs(lhs))


def test_dense_mode_assemble_matches_sparse_mode():
    rng = np.random.default_rng(9)
    for _ in range(10):
        n = int(rng.integers(2, 10))
        m = int(rng.integers(1, 5))
        p = random_problem(rng, n, m, density=0.4, c_density=0.9)
        cop_d, adj_d = compress(p, dense_c=True)
        cop_s, adj_s = compress(p, dense_c=False)
        lam = rng.standard_normal(m)
        extra = rng.standard_normal(m)
        Sd = adj_d.assemble(lam=lam, extra=extra, c_coeff=-2.0)
        Ss = adj_s.assemble(lam=lam, extra=extra, c_coeff=-2.0)
        assert isinstance(Sd, np.ndarray)
        assert rel_err(Sd, Ss.toarray()) <= 1e-13
        # the no-objective path stays sparse even in dense mode
        S0 = adj_d.assemble(lam=lam, c_coeff=0.0)
        assert sp.issparse(S0)
        assert rel_err(S0.toarray(), adj_s.assemble(lam=lam, c_coeff=0.0).toarray()) <= 1e-13


def test_symmetric_csr_and_bundle_objective():
    rng = np.random.default_rng(10)
    p = random_problem(rng, 12, 3)
    assert np.allclose(symmetric_csr(p.C).toarray(), p.C.to_dense())
    ops = build_operators(p, dense_c=False)
    U = rng.standard_normal((12, 2))
    V = rng.standard_normal((12, 2))
    want = float(np.sum(p.C.to_dense() * (U @ V.T)))
    assert abs(ops.objective_value(U, V) - want) <= 1e-12 * (1 + abs(want))


def test_operator_stats_keys():
    ops = build_operators(triangle())
    st = operator_stats(ops.cop, ops.adj)
    assert st["K"] == 3 and st["dense_c"] is True
