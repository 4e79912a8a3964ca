"""Problem data model and ingestion.

The solver works on linear SDPs in the canonical minimization form

    min <C, X>  s.t.  <A_i, X> = b_i (i = 1..m),  X psd,

with C and every A_i symmetric and sparse. Symmetric matrices are stored as
upper-triangle triplets (row <= col); an off-diagonal triplet stands for both
mirror entries, so inner products count it twice.

Three ingestion paths produce :class:`SdpProblem`:

* SDPA sparse ``.dat-s`` text (single semidefinite block only). SDPA encodes a
  maximization; C is negated on read and the reported objective is negated
  back on output (``maximize=True``).
* weighted graph edge lists, turned into the MaxCut relaxation
  (C = -L/4, diagonal constraints X_ii = 1),
* observation triples (i, j, value), turned into the nuclear-norm
  matrix-completion SDP on the block matrix [[W1, Y^T], [Y, W2]].

File indices are 1-based; everything is 0-based once inside the library.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SdpaParseError, UnsupportedFeatureError

# nnz(C)/n^2 above this, with n at most DENSE_C_MAX_N, flips storage of C (and
# of every assembled dual-side matrix) to dense n x n arrays.
DENSE_C_THRESHOLD = 0.25
DENSE_C_MAX_N = 4096


@dataclass
class SymmetricSparse:
    """Upper-triangle triplet storage of a symmetric n x n matrix."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_entries(cls, n, entries):
        """Build from an iterable of (row, col, value), 0-based, row <= col."""
        if entries:
            r, c, v = zip(*entries)
        else:
            r, c, v = (), (), ()
        return cls(n, np.asarray(r, dtype=np.int64), np.asarray(c, dtype=np.int64),
                   np.asarray(v, dtype=np.float64))

    @property
    def nnz_stored(self):
        return len(self.vals)

    @property
    def nnz_full(self):
        """Nonzeros of the full (mirrored) matrix."""
        return len(self.vals) + int(np.count_nonzero(self.rows != self.cols))

    def check(self):
        """Return a list of invariant violations (empty when valid)."""
        problems = []
        if np.any((self.rows < 0) | (self.cols >= self.n) | (self.rows > self.n - 1) | (self.cols < 0)):
            problems.append("index out of range")
        if np.any(self.rows > self.cols):
            problems.append("entry below the diagonal (row > col)")
        if len(self.vals):
            code = self.rows * self.n + self.cols
            if len(np.unique(code)) != len(code):
                problems.append("duplicate (row, col) entry")
        if not np.all(np.isfinite(self.vals)):
            problems.append("non-finite value")
        return problems

    def to_dense(self):
        M = np.zeros((self.n, self.n))
        M[self.rows, self.cols] = self.vals
        M[self.cols, self.rows] = self.vals
        return M

    def vec_norm1(self):
        """1-norm of the full vectorization (off-diagonal entries twice)."""
        off = self.rows != self.cols
        return float(np.sum(np.abs(self.vals)) + np.sum(np.abs(self.vals[off])))

    def inner_lowrank(self, U, V):
        """<M, U V^T> evaluated from the triplets, no n x n product."""
        prods = np.einsum("kr,kr->k", U[self.rows], V[self.cols])
        s = float(np.dot(self.vals, prods))
        off = self.rows != self.cols
        if np.any(off):
            mirror = np.einsum("kr,kr->k", U[self.cols[off]], V[self.rows[off]])
            s += float(np.dot(self.vals[off], mirror))
        return s

    def __eq__(self, other):
        if not isinstance(other, SymmetricSparse):
            return NotImplemented
        return (self.n == other.n
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.vals, other.vals))


@dataclass
class GraphEdgeList:
    """Undirected weighted graph: vertices 0..n-1, edges (u, v, w) with u < v."""

    n: int
    edges_u: np.ndarray
    edges_v: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_edges(cls, n, edges):
        if edges:
            u, v, w = zip(*edges)
        else:
            u, v, w = (), (), ()
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        g = cls(n, u, v, w)
        g.check()
        return g

    def check(self):
        if np.any(self.edges_u >= self.edges_v):
            raise ValueError("edges must satisfy u < v (no self-loops)")
        if np.any((self.edges_u < 0) | (self.edges_v >= self.n)):
            raise ValueError("edge endpoint out of range")
        code = self.edges_u * self.n + self.edges_v
        if len(np.unique(code)) != len(code):
            raise ValueError("duplicate edge")


@dataclass
class ObservationSet:
    """Observed entries of an n2 x n1 matrix M: triples (i, j, M_ij), 0-based."""

    n2: int
    n1: int
    obs_i: np.ndarray
    obs_j: np.ndarray
    obs_val: np.ndarray

    @classmethod
    def from_triples(cls, n2, n1, triples):
        if triples:
            i, j, v = zip(*triples)
        else:
            i, j, v = (), (), ()
        o = cls(n2, n1, np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64),
                np.asarray(v, dtype=np.float64))
        o.check()
        return o

    def check(self):
        if np.any((self.obs_i < 0) | (self.obs_i >= self.n2)):
            raise ValueError("observation row index out of range")
        if np.any((self.obs_j < 0) | (self.obs_j >= self.n1)):
            raise ValueError("observation column index out of range")
        code = self.obs_i * self.n1 + self.obs_j
        if len(np.unique(code)) != len(code):
            raise ValueError("duplicate observation")


@dataclass
class SdpProblem:
    """Immutable SDP instance.

    Constraints are stored stacked: entry k of (a_con, a_row, a_col, a_val)
    is an upper-triangle triplet of matrix A_{a_con[k]}. ``maximize`` records
    that the source format was a maximization whose objective was negated on
    ingestion; reports negate the optimal value back.
    """

    n: int
    m: int
    C: SymmetricSparse
    a_con: np.ndarray
    a_row: np.ndarray
    a_col: np.ndarray
    a_val: np.ndarray
    b: np.ndarray
    maximize: bool = False
    b_norm1: float = field(init=False)
    b_norminf: float = field(init=False)
    c_vec_norm1: float = field(init=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("problem needs n >= 1 and m >= 1")
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (self.m,):
            raise ValueError("b has wrong length")
        self.b_norm1 = float(np.sum(np.abs(self.b)))
        self.b_norminf = float(np.max(np.abs(self.b))) if self.m else 0.0
        self.c_vec_norm1 = self.C.vec_norm1()

    @property
    def dense_c(self):
        """True when C should be stored dense (small and filled)."""
        full = self.C.nnz_full
        return self.n <= DENSE_C_MAX_N and full > DENSE_C_THRESHOLD * self.n * self.n

    def constraint(self, i):
        """Materialize A_i as a SymmetricSparse (small-instance/test path)."""
        sel = self.a_con == i
        return SymmetricSparse(self.n, self.a_row[sel].copy(), self.a_col[sel].copy(),
                               self.a_val[sel].copy())

    @property
    def A(self):
        return [self.constraint(i) for i in range(self.m)]

    def nnz_a_full(self):
        """Nonzeros of the stacked operator under full vectorization."""
        return len(self.a_val) + int(np.count_nonzero(self.a_row != self.a_col))

    def __eq__(self, other):
        if not isinstance(other, SdpProblem):
            return NotImplemented
        return (self.n == other.n and self.m == other.m
                and self.maximize == other.maximize
                and self.C == other.C
                and np.array_equal(self.a_con, other.a_con)
                and np.array_equal(self.a_row, other.a_row)
                and np.array_equal(self.a_col, other.a_col)
                and np.array_equal(self.a_val, other.a_val)
                and np.array_equal(self.b, other.b))


def _sum_duplicates(con, row, col, val, n, what):
    """Sort triplets by (con, row, col) and sum duplicates with a warning."""
    order = np.lexsort((col, row, con))
    con, row, col, val = con[order], row[order], col[order], val[order]
    code = (con * n + row) * n + col
    uniq, inverse = np.unique(code, return_inverse=True)
    if len(uniq) != len(code):
        warnings.warn(f"duplicate entries in {what} summed")
        val = np.bincount(inverse, weights=val, minlength=len(uniq))
        first = np.searchsorted(code, uniq)  # code is sorted after the lexsort
        con, row, col = con[first], row[first], col[first]
    return con, row, col, val


def _tokenize_sdpa(text):
    """Yield (line_number, tokens) for non-comment, non-empty lines."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in '"*':
            continue
        cleaned = stripped.replace("{", " ").replace("}", " ").replace(",", " ").replace("(", " ").replace(")", " ")
        toks = cleaned.split()
        if toks:
            yield lineno, toks


def parse_sdpa(source) -> SdpProblem:
    """Parse SDPA sparse format text, bytes, or a readable stream.

    Accepts exactly one semidefinite block. The file's maximization objective
    is negated into minimization form (``maximize=True`` on the result).
    """
    if isinstance(source, bytes):
        text = source.decode("ascii", errors="replace")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("ascii", errors="replace")

    lines = _tokenize_sdpa(text)

    def next_line(what):
        try:
            return next(lines)
        except StopIteration:
            raise SdpaParseError(f"unexpected end of file while reading {what}") from None

    lineno, toks = next_line("constraint count")
    try:
        m = int(toks[0])
    except ValueError:
        raise SdpaParseError(f"line {lineno}: constraint count is not an integer") from None
    if m < 1:
        raise SdpaParseError(f"line {lineno}: need at least one constraint")

    lineno, toks = next_line("block count")
    try:
        nblocks = int(toks[0])
    except ValueError:
        raise SdpaParseError(f"line {lineno}: block count is not an integer") from None
    if nblocks != 1:
        raise UnsupportedFeatureError(f"line {lineno}: only single-block problems are supported, got {nblocks} blocks")

    lineno, toks = next_line("block sizes")
    try:
        sizes = [int(t) for t in toks]
    except ValueError:
        raise SdpaParseError(f"line {lineno}: malformed block size line") from None
    if len(sizes) != 1:
        raise UnsupportedFeatureError(f"line {lineno}: expected one block size, got {len(sizes)}")
    if sizes[0] < 0:
        raise UnsupportedFeatureError(f"line {lineno}: linear (diagonal) blocks are not supported")
    n = sizes[0]
    if n < 1:
        raise SdpaParseError(f"line {lineno}: block size must be positive")

    b = []
    while len(b) < m:
        lineno, toks = next_line("right-hand side")
        try:
            b.extend(float(t) for t in toks)
        except ValueError:
            raise SdpaParseError(f"line {lineno}: malformed right-hand side value") from None
    if len(b) != m:
        raise SdpaParseError(f"line {lineno}: right-hand side has {len(b)} values, expected {m}")
    b = np.asarray(b, dtype=np.float64)

    recs = {"con": [], "row": [], "col": [], "val": []}
    for lineno, toks in lines:
        if len(toks) != 5:
            raise SdpaParseError(f"line {lineno}: expected 'matno blkno i j value', got {len(toks)} fields")
        try:
            matno, blkno, i, j = (int(t) for t in toks[:4])
            value = float(toks[4])
        except ValueError:
            raise SdpaParseError(f"line {lineno}: malformed record") from None
        if not 0 <= matno <= m:
            raise SdpaParseError(f"line {lineno}: matrix number {matno} out of range 0..{m}")
        if blkno != 1:
            raise UnsupportedFeatureError(f"line {lineno}: record references block {blkno}; only one block supported")
        if not (1 <= i <= n and 1 <= j <= n):
            raise SdpaParseError(f"line {lineno}: index ({i},{j}) outside block of size {n}")
        if value == 0.0:
            continue
        r, c = (i - 1, j - 1) if i <= j else (j - 1, i - 1)
        recs["con"].append(matno)
        recs["row"].append(r)
        recs["col"].append(c)
        recs["val"].append(value)

    con = np.asarray(recs["con"], dtype=np.int64)
    row = np.asarray(recs["row"], dtype=np.int64)
    col = np.asarray(recs["col"], dtype=np.int64)
    val = np.asarray(recs["val"], dtype=np.float64)
    con, row, col, val = _sum_duplicates(con, row, col, val, n, "SDPA records")

    is_c = con == 0
    # SDPA states max <C, X>; canonical form minimizes, so flip C here.
    C = SymmetricSparse(n, row[is_c], col[is_c], -val[is_c])
    return SdpProblem(n=n, m=m, C=C,
                      a_con=con[~is_c] - 1, a_row=row[~is_c], a_col=col[~is_c],
                      a_val=val[~is_c], b=b, maximize=True)


def serialize_sdpa(p: SdpProblem) -> str:
    """Write an SdpProblem back to canonical SDPA sparse text.

    Inverse of :func:`parse_sdpa` up to entry ordering: parsing the output
    reproduces the problem field-by-field.
    """
    out = io.StringIO()
    out.write(f"{p.m}\n1\n{p.n}\n")
    out.write(" ".join(repr(float(x)) for x in p.b) + "\n")
    # stored C is the negated file objective; undo the flip on write
    for r, c, v in zip(p.C.rows, p.C.cols, p.C.vals):
        out.write(f"0 1 {r + 1} {c + 1} {repr(float(-v))}\n")
    order = np.lexsort((p.a_col, p.a_row, p.a_con))
    for k in order:
        out.write(f"{p.a_con[k] + 1} 1 {p.a_row[k] + 1} {p.a_col[k] + 1} {repr(float(p.a_val[k]))}\n")
    return out.getvalue()


def build_maxcut(g: GraphEdgeList) -> SdpProblem:
    """MaxCut relaxation: max <L/4, X> s.t. diag(X) = 1, X psd.

    Returned in minimization form with C = -L/4 and ``maximize=True``.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    n = g.n
    deg = np.zeros(n)
    np.add.at(deg, g.edges_u, g.weights)
    np.add.at(deg, g.edges_v, g.weights)
    # Laplacian upper triangle: diagonal = weighted degree, off-diagonal = -w.
    rows = np.concatenate([np.arange(n), g.edges_u])
    cols = np.concatenate([np.arange(n), g.edges_v])
    vals = np.concatenate([deg, -g.weights]) * (-0.25)
    keep = vals != 0.0
    order = np.lexsort((cols[keep], rows[keep]))
    C = SymmetricSparse(n, rows[keep][order], cols[keep][order], vals[keep][order])
    idx = np.arange(n, dtype=np.int64)
    return SdpProblem(n=n, m=n, C=C, a_con=idx, a_row=idx, a_col=idx,
                      a_val=np.ones(n), b=np.ones(n), maximize=True)


def build_matrix_completion(o: ObservationSet) -> SdpProblem:
    """Nuclear-norm completion SDP on X = [[W1, Y^T], [Y, W2]].

    Block sizes are n1 (columns of M) then n2 (rows of M); observation (i, j)
    pins X[n1+i, j] = M_ij via a symmetric pair of unit entries, so
    b = 2 M_ij. The objective is trace(X), i.e. C = I.
    """
    if len(o.obs_val) == 0:
        raise ValueError("need at least one observation")
    n = o.n1 + o.n2
    m = len(o.obs_val)
    eye = np.arange(n, dtype=np.int64)
    C = SymmetricSparse(n, eye, eye.copy(), np.ones(n))
    return SdpProblem(n=n, m=m, C=C,
                      a_con=np.arange(m, dtype=np.int64),
                      a_row=o.obs_j.astype(np.int64),
                      a_col=(o.n1 + o.obs_i).astype(np.int64),
                      a_val=np.ones(m),
                      b=2.0 * o.obs_val,
                      maximize=False)


@dataclass
class Diagnostics:
    """Result of :func:`validate`: never raises, only reports."""

    index_ok: bool
    symmetry_ok: bool
    duplicate_count: int
    nnz_a: int
    nnz_c: int
    nonzero_columns: int
    messages: list


def validate(p: SdpProblem) -> Diagnostics:
    """Structural diagnostics: index ranges, triangle orientation, duplicates,
    nonzero statistics of the stacked operator."""
    messages = []
    index_ok = bool(np.all((p.a_row >= 0) & (p.a_col < p.n) & (p.a_col >= 0) & (p.a_row < p.n))
                    and np.all((p.a_con >= 0) & (p.a_con < p.m)))
    if not index_ok:
        messages.append("constraint entry index out of range")
    symmetry_ok = bool(np.all(p.a_row <= p.a_col)) and not np.any(p.C.rows > p.C.cols)
    if not symmetry_ok:
        messages.append("entry stored below the diagonal: symmetry violation")

    code = (p.a_con * p.n + p.a_row) * p.n + p.a_col
    duplicate_count = len(code) - len(np.unique(code)) if len(code) else 0
    if duplicate_count:
        messages.append(f"{duplicate_count} duplicate constraint entries")

    # Distinct full-vectorization positions touched by any A_i.
    pos = np.concatenate([p.a_row * p.n + p.a_col,
                          p.a_col[p.a_row != p.a_col] * p.n + p.a_row[p.a_row != p.a_col]])
    nonzero_columns = len(np.unique(pos)) if len(pos) else 0

    return Diagnostics(index_ok=index_ok, symmetry_ok=symmetry_ok,
                       duplicate_count=duplicate_count,
                       nnz_a=p.nnz_a_full(), nnz_c=p.C.nnz_full,
                       nonzero_columns=nonzero_columns, messages=messages)


def read_edge_list(text: str) -> GraphEdgeList:
    """Parse 'n' header then 'u v [w]' lines (1-based, w defaults to 1.0)."""
    lines = [ln for ln in (l.strip() for l in text.splitlines())
             if ln and not ln.startswith(("#", "%"))]
    if not lines:
        raise ValueError("empty edge list")
    header = lines[0].split()
    n = int(header[0])
    u_list, v_list, w_list = [], [], []
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) not in (2, 3):
            raise ValueError(f"bad edge line: {ln!r}")
        u, v = int(toks[0]) - 1, int(toks[1]) - 1
        w = float(toks[2]) if len(toks) == 3 else 1.0
        if u > v:
            u, v = v, u
        u_list.append(u)
        v_list.append(v)
        w_list.append(w)
    return GraphEdgeList.from_edges(n, list(zip(u_list, v_list, w_list)))


def read_observations(text: str) -> ObservationSet:
    """Parse 'n2 n1' header then 'i j value' lines (1-based)."""
    lines = [ln for ln in (l.strip() for l in text.splitlines())
             if ln and not ln.startswith(("#", "%"))]
    if not lines:
        raise ValueError("empty observation file")
    header = lines[0].split()
    if len(header) < 2:
        raise ValueError("observation header must be 'n2 n1'")
    n2, n1 = int(header[0]), int(header[1])
    triples = []
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) != 3:
            raise ValueError(f"bad observation line: {ln!r}")
        triples.append((int(toks[0]) - 1, int(toks[1]) - 1, float(toks[2])))
    return ObservationSet.from_triples(n2, n1, triples)
