"""Fused, column-compressed constraint operators.

The m constraint matrices are stacked as one wide operator acting on the full
vectorization of X, then the columns that are zero in every constraint are
deleted. What remains is:

* ``CompressedOperator``: an m x K sparse matrix over the K surviving
  (i, j) positions, plus the two index maps giving each compressed column its
  position in the n x n matrix. Evaluating the constraint map on a low-rank
  pair is then one gathered row-dot-product (no n x n intermediate) followed
  by one sparse mat-vec.
* ``AdjointOperator``: the matching rows of the transposed operator, aligned
  to the union support of the constraint positions and the objective's
  nonzeros, so multiplier combinations and the objective add densely on a
  fixed index set and wrap straight into a CSR matrix whose pattern is
  precomputed once.

Compressed vectors are plain float arrays of length K in the operator's
column order (lexicographic by position). Everything here is immutable after
:func:`compress` and allocation stays O(nnz + m + n*r); no n^2-sized dense
object is ever created in sparse mode. Problems whose objective is small and
filled (see ``SdpProblem.dense_c``) instead keep the objective, and any
assembled matrix that includes it, as a bounded dense n x n array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError
from .problem import SdpProblem


@dataclass
class CompressedOperator:
    """Stacked constraint operator with zero columns removed."""

    m: int
    n: int
    ncols: int                 # K, retained columns
    rows: sp.csr_matrix        # m x K
    imap: np.ndarray           # row index of column k's position
    jmap: np.ndarray           # col index of column k's position
    col_slot: np.ndarray       # slot of column k inside the adjoint support

    def outer_product(self, U, V):
        """Gathered outer product: x[k] = U[imap[k], :] . V[jmap[k], :].

        This is the only way factor pairs enter the constraint map; the full
        product U V^T is never formed.
        """
        U = np.asarray(U)
        V = np.asarray(V)
        if U.ndim != 2 or V.ndim != 2 or U.shape != V.shape or U.shape[0] != self.n:
            raise DimensionMismatchError(
                f"factors must both be {self.n} x r, got {U.shape} and {V.shape}")
        return np.einsum("kr,kr->k", U[self.imap], V[self.jmap])

    def apply(self, xvals):
        """Constraint values from a compressed vector: rows @ xvals."""
        xvals = np.asarray(xvals)
        if xvals.shape != (self.ncols,):
            raise DimensionMismatchError(
                f"compressed vector has length {xvals.shape}, operator has {self.ncols} columns")
        return self.rows @ xvals

    def apply_pair(self, U, V):
        """Fused evaluation of the constraint map on U V^T."""
        return self.apply(self.outer_product(U, V))


@dataclass
class AdjointOperator:
    """Support-aligned transpose rows plus objective values for assembly."""

    m: int
    n: int
    sup_i: np.ndarray           # support positions, row indices
    sup_j: np.ndarray           # support positions, col indices
    rows: sp.csr_matrix         # |support| x m
    c_vals: np.ndarray          # objective values on the support (0 off C)
    csr_indptr: np.ndarray      # precomputed wrap pattern
    csr_indices: np.ndarray
    dense_c: np.ndarray | None = None   # set only in dense-objective mode

    @property
    def size(self):
        return len(self.sup_i)

    def apply(self, y):
        """Adjoint combination on the support: rows @ y."""
        y = np.asarray(y)
        if y.shape != (self.m,):
            raise DimensionMismatchError(f"multiplier has shape {y.shape}, expected ({self.m},)")
        return self.rows @ y

    def assemble(self, lam=None, extra=None, c_coeff=1.0):
        """Wrap c_coeff*C + adjoint(lam) + adjoint(extra) into an n x n matrix.

        Additions happen densely on the fixed support; the result reuses the
        precomputed CSR pattern (or a bounded dense array in dense mode when
        the objective participates).
        """
        data = np.zeros(self.size)
        if lam is not None:
            data += self.apply(lam)
        if extra is not None:
            data += self.apply(extra)
        if self.dense_c is not None and c_coeff != 0.0:
            S = c_coeff * self.dense_c
            S[self.sup_i, self.sup_j] += data
            return S
        if self.dense_c is None and c_coeff != 0.0:
            data += c_coeff * self.c_vals
        return sp.csr_matrix((data, self.csr_indices, self.csr_indptr),
                             shape=(self.n, self.n))


def spmm(S, V):
    """Product of an assembled n x n matrix (sparse or dense) with n x r."""
    V = np.asarray(V)
    if S.shape[1] != V.shape[0]:
        raise DimensionMismatchError(f"cannot multiply {S.shape} by {V.shape}")
    return S @ V


def _full_positions(n, con, row, col, val):
    """Expand upper-triangle triplets into full-vectorization (code, con, val)."""
    off = row != col
    codes = np.concatenate([row * n + col, col[off] * n + row[off]])
    cons = np.concatenate([con, con[off]])
    vals = np.concatenate([val, val[off]])
    return codes, cons, vals


def compress(p: SdpProblem, dense_c: bool | None = None):
    """Build the fused operator pair for a problem.

    Column order is lexicographic by (i, j), so builds are deterministic.
    ``dense_c`` overrides the problem's automatic dense-objective flag.
    """
    n, m = p.n, p.m
    if dense_c is None:
        dense_c = p.dense_c

    codes, cons, vals = _full_positions(n, p.a_con, p.a_row, p.a_col, p.a_val)
    uniq, colidx = np.unique(codes, return_inverse=True)
    K = len(uniq)
    rows = sp.csr_matrix((vals, (cons, colidx)), shape=(m, K))
    imap = uniq // n
    jmap = uniq % n

    if dense_c:
        # Objective handled densely; the adjoint support is just the
        # constraint positions and the wrap pattern serves the no-C path.
        sup = uniq
        col_slot = np.arange(K, dtype=np.int64)
        at_rows = sp.csr_matrix((vals, (colidx, cons)), shape=(K, m))
        c_vals = np.zeros(K)
        dense = p.C.to_dense()
    else:
        c_codes, _, c_full_vals = _full_positions(
            n, np.zeros(len(p.C.vals), dtype=np.int64), p.C.rows, p.C.cols, p.C.vals)
        sup = np.union1d(uniq, c_codes)
        col_slot = np.searchsorted(sup, uniq)
        at_rows = sp.csr_matrix((vals, (col_slot[colidx], cons)), shape=(len(sup), m))
        c_vals = np.zeros(len(sup))
        c_vals[np.searchsorted(sup, c_codes)] = c_full_vals
        dense = None

    sup_i = sup // n
    sup_j = sup % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(sup_i, minlength=n), out=indptr[1:])

    cop = CompressedOperator(m=m, n=n, ncols=K, rows=rows, imap=imap, jmap=jmap,
                             col_slot=col_slot)
    adj = AdjointOperator(m=m, n=n, sup_i=sup_i, sup_j=sup_j, rows=at_rows,
                          c_vals=c_vals, csr_indptr=indptr, csr_indices=sup_j.copy(),
                          dense_c=dense)
    return cop, adj


def operator_stats(cop: CompressedOperator, adj: AdjointOperator):
    """Size statistics for memory reporting."""
    return {
        "K": cop.ncols,
        "omega_size": adj.size,
        "nnz_rows": int(cop.rows.nnz),
        "dense_c": adj.dense_c is not None,
    }


def symmetric_csr(M):
    """Full CSR matrix from upper-triangle triplet storage."""
    off = M.rows != M.cols
    r = np.concatenate([M.rows, M.cols[off]])
    c = np.concatenate([M.cols, M.rows[off]])
    v = np.concatenate([M.vals, M.vals[off]])
    return sp.csr_matrix((v, (r, c)), shape=(M.n, M.n))


@dataclass
class OperatorBundle:
    """Everything the solve stages need: problem data plus built operators."""

    problem: SdpProblem
    cop: CompressedOperator
    adj: AdjointOperator
    c_mat: object   # n x n objective, CSR or dense per storage mode

    def objective_value(self, U, V):
        """<C, U V^T> as <C V, U>; no n x n product."""
        return float(np.sum(spmm(self.c_mat, V) * U))


def build_operators(p: SdpProblem, dense_c: bool | None = None) -> OperatorBundle:
    cop, adj = compress(p, dense_c)
    c_mat = adj.dense_c if adj.dense_c is not None else symmetric_csr(p.C)
    return OperatorBundle(problem=p, cop=cop, adj=adj, c_mat=c_mat)
