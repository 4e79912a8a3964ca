"""Dense reference implementations used as independent oracles.

Everything here deliberately materializes n x n matrices and stacked
operators; the point is to check the compressed/fused code paths against
straightforward linear algebra on instances small enough to afford it.
"""

import numpy as np

from lrsdp.problem import SdpProblem, SymmetricSparse


def dense_constraints(p: SdpProblem):
    """List of dense A_i plus dense C."""
    mats = [np.zeros((p.n, p.n)) for _ in range(p.m)]
    for k in range(len(p.a_val)):
        i, r, c, v = p.a_con[k], p.a_row[k], p.a_col[k], p.a_val[k]
        mats[i][r, c] = v
        mats[i][c, r] = v
    return mats, p.C.to_dense()


def dense_apply_A(mats, X):
    return np.array([float(np.sum(A * X)) for A in mats])


def dense_adjoint(mats, y):
    S = np.zeros_like(mats[0])
    for yi, A in zip(y, mats):
        S += yi * A
    return S


def dense_lagrangian(p, mats, C, R, lam, rho, scale=1.0):
    """Augmented Lagrangian of the symmetric factorization, dense."""
    X = R @ R.T
    resid = dense_apply_A(mats, X) - p.b
    return (scale * float(np.sum(C * X)) + float(lam @ resid)
            + 0.5 * rho * float(resid @ resid))


def dense_alm_gradient(p, mats, C, R, lam, rho, scale=1.0):
    X = R @ R.T
    resid = dense_apply_A(mats, X) - p.b
    S = scale * C + dense_adjoint(mats, lam + rho * resid)
    return 2.0 * S @ R


def fd_gradient(f, R, step=1e-6):
    """Central finite differences of a scalar function of a matrix."""
    G = np.zeros_like(R)
    for i in range(R.shape[0]):
        for j in range(R.shape[1]):
            Rp = R.copy(); Rp[i, j] += step
            Rm = R.copy(); Rm[i, j] -= step
            G[i, j] = (f(Rp) - f(Rm)) / (2.0 * step)
    return G


def dense_lbfgs_matrix(pairs, size):
    """Explicit inverse-Hessian product matrix of the two-loop recursion.

    pairs: list of (s, y) flattened arrays, oldest first; identity seed.
    """
    H = np.eye(size)
    for s, y in pairs:
        beta = 1.0 / float(y @ s)
        V = np.eye(size) - beta * np.outer(y, s)
        H = V.T @ H @ V + beta * np.outer(s, s)
    return H


def dense_normal_matrix(mats, V, rho):
    """The half-step system matrix rho * sum vec(A_i V) vec(A_i V)^T + rho I."""
    n, r = V.shape
    nr = n * r
    M = rho * np.eye(nr)
    for A in mats:
        w = (A @ V).reshape(nr, order="F")
        M += rho * np.outer(w, w)
    return M


def dense_subproblem_rhs(p, mats, C, V, lam, rho, scale=1.0):
    return (-scale * C @ V - dense_adjoint(mats, lam) @ V
            + rho * dense_adjoint(mats, p.b) @ V + rho * V)


def random_problem(rng, n, m, density=0.3, c_density=0.3, force_sparse_mode=False):
    """Random SDP instance with sparse symmetric data.

    With ``force_sparse_mode`` the objective is thinned until the automatic
    dense-storage flag stays off.
    """
    def random_sym(density):
        entries = []
        for i in range(n):
            for j in range(i, n):
                if rng.random() < density:
                    entries.append((i, j, float(rng.standard_normal())))
        if not entries:
            entries.append((0, 0, float(rng.standard_normal())))
        return entries

    cons, rows, cols, vals = [], [], [], []
    for k in range(m):
        for (i, j, v) in random_sym(density):
            cons.append(k); rows.append(i); cols.append(j); vals.append(v)
    c_entries = random_sym(c_density)
    C = SymmetricSparse.from_entries(n, c_entries)
    p = SdpProblem(n=n, m=m, C=C,
                   a_con=np.array(cons, dtype=np.int64),
                   a_row=np.array(rows, dtype=np.int64),
                   a_col=np.array(cols, dtype=np.int64),
                   a_val=np.array(vals, dtype=np.float64),
                   b=rng.standard_normal(m))
    return p


def random_graph(rng, n, p_edge):
    """Erdos-Renyi edge arrays for MaxCut instances."""
    from lrsdp.problem import GraphEdgeList
    mask = np.triu(rng.random((n, n)) < p_edge, 1)
    iu, ju = np.nonzero(mask)
    return GraphEdgeList(n, iu.astype(np.int64), ju.astype(np.int64),
                         np.ones(len(iu)))


def completion_instance(rng, n2, n1, rank, frac):
    """Rank-`rank` ground truth with a Bernoulli observation mask."""
    from lrsdp.problem import ObservationSet
    A = rng.standard_normal((n2, rank))
    B = rng.standard_normal((n1, rank))
    M = A @ B.T
    mask = rng.random((n2, n1)) < frac
    ii, jj = np.nonzero(mask)
    obs = ObservationSet(n2, n1, ii.astype(np.int64), jj.astype(np.int64), M[ii, jj])
    return obs, M


def rel_err(got, want):
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    return float(np.linalg.norm(got - want) / (1.0 + np.linalg.norm(want)))
