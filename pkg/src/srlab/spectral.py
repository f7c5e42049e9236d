"""Finite-difference discretisation of L + V_alpha on a truncated box.

The kinetic part is assembled as sum_j D_j^T D_j from forward-difference
factors D_j ~ X_j with zero (Dirichlet) exterior values, mirroring the
Dirichlet-form definition of the operator: the result is symmetric positive
semidefinite by construction and second-order consistent at interior nodes
(the first-order errors of the paired forward/backward factors cancel).
The coefficient (1/2)(J_k x, e_j) of d/dt_k in X_j does not depend on x_j
or t, so sampling it at the source node equals sampling at the face
midpoint.

Eigenvalues come from Lanczos with full reorthogonalisation; a dense
eigensolver cross-check for small grids lives in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .group import MetivierStructure
from .potential import potential_value_xt


@dataclass(frozen=True)
class Grid3:
    """Cell-midpoint tensor grid on [-Lx, Lx]^{2n} x [-Lt, Lt]^m.

    The origin must not be a node (the potential is only defined by
    extension there), which fails exactly when every axis count is odd.
    """

    s: MetivierStructure
    lx: float
    lt: float
    nx: int
    nt: int

    def __post_init__(self):
        if self.nx < 3 or self.nt < 3:
            raise ValueError("need at least 3 points per axis")
        if self.lx <= 0 or self.lt <= 0:
            raise ValueError("half-widths must be positive")
        if self.nx % 2 == 1 and self.nt % 2 == 1:
            raise ValueError("all axis counts odd would place a node at the identity; "
                             "use an even count on at least one axis")

    @property
    def hx(self) -> float:
        return 2.0 * self.lx / self.nx

    @property
    def ht(self) -> float:
        return 2.0 * self.lt / self.nt

    @property
    def shape(self) -> tuple:
        return (self.nx,) * self.s.horizontal_dim + (self.nt,) * self.s.m

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    def axis_nodes(self, axis: int) -> np.ndarray:
        if axis < self.s.horizontal_dim:
            half, count = self.lx, self.nx
        else:
            half, count = self.lt, self.nt
        h = 2.0 * half / count
        return -half + (np.arange(count) + 0.5) * h

    def nodes(self):
        """Flattened (x, t) node coordinates in C order over the axis tuple."""
        axes = [self.axis_nodes(a) for a in range(len(self.shape))]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = [m.reshape(-1) for m in mesh]
        x = np.stack(flat[: self.s.horizontal_dim], axis=-1)
        t = np.stack(flat[self.s.horizontal_dim:], axis=-1)
        return x, t

    def describe(self) -> dict:
        return {"lx": self.lx, "lt": self.lt, "nx": self.nx, "nt": self.nt,
                "hx": self.hx, "ht": self.ht, "dim": self.dim}


def _forward_difference(count: int, h: float) -> sp.csr_matrix:
    # (Du)_i = (u_{i+1} - u_i)/h with u_count = 0 (Dirichlet exterior)
    main = -np.ones(count) / h
    upper = np.ones(count - 1) / h
    return sp.diags([main, upper], [0, 1], format="csr")


def _axis_operator(grid: Grid3, axis: int) -> sp.csr_matrix:
    shape = grid.shape
    h = grid.hx if axis < grid.s.horizontal_dim else grid.ht
    op = _forward_difference(shape[axis], h)
    before = int(np.prod(shape[:axis], dtype=int)) if axis > 0 else 1
    after = int(np.prod(shape[axis + 1:], dtype=int)) if axis + 1 < len(shape) else 1
    return sp.kron(sp.identity(before, format="csr"),
                   sp.kron(op, sp.identity(after, format="csr"), format="csr"),
                   format="csr")


def assemble_derivative(s: MetivierStructure, grid: Grid3, j: int) -> sp.csr_matrix:
    """Forward-difference factor for X_j = d/dx_j + sum_k c_jk(x) d/dt_k.

    The first `grid.dim` rows sample X_j at the nodes by forward differences
    with zero exterior values; the remaining rows sample it on the exterior
    layer below the lower boundaries, where only one difference survives.
    Without those rows the quadratic form ||D_j u||^2 would leave the lower
    ends of the box free (Neumann) instead of Dirichlet, breaking eigenvalue
    monotonicity under box growth.  Node rows are first-order consistent; the
    composed sum_j D_j^T D_j is second-order consistent in the interior.
    """
    if not 0 <= j < s.horizontal_dim:
        raise ValueError(f"derivative index {j} out of range [0, {s.horizontal_dim})")
    if grid.s.horizontal_dim != s.horizontal_dim or grid.s.m != s.m:
        raise ValueError("grid was built for a structure of different dimensions")
    x, _ = grid.nodes()
    d = _axis_operator(grid, j)
    for k in range(s.m):
        c = 0.5 * np.einsum("ji,si->sj", s.maps[k], x)[:, j]
        dt = _axis_operator(grid, s.horizontal_dim + k)
        d = d + sp.diags(c, format="csr") @ dt
    d = d.tocsr()

    shape = grid.shape
    idx = np.unravel_index(np.arange(grid.dim), shape)
    cols = [np.nonzero(idx[j] == 0)[0]]
    vals = [np.full(cols[0].size, 1.0 / grid.hx)]
    for k in range(s.m):
        c = 0.5 * np.einsum("ji,si->sj", s.maps[k], x)[:, j]
        edge_t = np.nonzero(idx[s.horizontal_dim + k] == 0)[0]
        cols.append(edge_t)
        vals.append(c[edge_t] / grid.ht)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    boundary = sp.coo_matrix((vals, (np.arange(cols.size), cols)),
                             shape=(cols.size, grid.dim)).tocsr()
    return sp.vstack([d, boundary], format="csr")


@dataclass(frozen=True)
class SparseSymmetricOperator:
    """Compressed-row symmetric operator; exact symmetry is enforced on build."""

    dim: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_scipy(cls, a: sp.spmatrix) -> "SparseSymmetricOperator":
        a = a.tocsr()
        a.sum_duplicates()
        a.sort_indices()
        return cls(dim=a.shape[0], indptr=a.indptr.copy(),
                   indices=a.indices.copy(), data=a.data.copy())

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr),
                             shape=(self.dim, self.dim))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ v

    def symmetry_defect(self) -> float:
        a = self.to_scipy()
        d = a - a.T
        return 0.0 if d.nnz == 0 else float(np.max(np.abs(d.data)))

    def assert_symmetric(self, tol: float = 0.0):
        defect = self.symmetry_defect()
        if defect > tol:
            raise ValueError(f"operator is not symmetric (defect {defect:.3e})")

    @property
    def nnz(self) -> int:
        return int(self.data.size)


def assemble_operator(alpha: float, s: MetivierStructure, grid: Grid3,
                      potential=None) -> SparseSymmetricOperator:
    """H = sum_j D_j^T D_j + diag(V_alpha at nodes), exactly symmetric.

    `potential` may override V_alpha with any callable (x, t) -> values;
    nodes where it returns +inf are removed (hard Dirichlet wall), which
    decouples the retained block exactly.
    """
    x, t = grid.nodes()
    if potential is None:
        v = potential_value_xt(alpha, s, x, t)
    else:
        v = np.asarray(potential(x, t), dtype=float)
    kin = None
    for j in range(s.horizontal_dim):
        d = assemble_derivative(s, grid, j)
        term = (d.T @ d).tocsr()
        kin = term if kin is None else kin + term
    keep = ~np.isinf(v)
    if not np.all(keep):
        idx = np.nonzero(keep)[0]
        kin = kin[idx][:, idx]
        v = v[idx]
    h = kin + sp.diags(v, format="csr")
    h = ((h + h.T) * 0.5).tocsr()
    op = SparseSymmetricOperator.from_scipy(h)
    op.assert_symmetric()
    return op


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    residual_norms: np.ndarray
    iterations: int
    converged: bool
    grid: Grid3 | None = None


def lanczos_lowest(h: SparseSymmetricOperator, k: int, tol: float = 1e-8,
                   max_iter: int = 1000, seed: int = 0,
                   grid: Grid3 | None = None) -> SpectrumResult:
    """Lowest k eigenpairs by Lanczos with full reorthogonalisation.

    Deterministic for a given seed.  Non-convergence within max_iter is
    reported through `converged=False` with the best available residuals,
    not as an exception.
    """
    h.assert_symmetric()
    n = h.dim
    if k < 1 or k >= n:
        raise ValueError("need 1 <= k < dimension")
    a = h.to_scipy()
    max_iter = min(max_iter, n)
    rng = np.random.default_rng(seed)
    cap = min(max_iter, 256)
    q = np.zeros((n, cap), order="F")
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    q[:, 0] = v
    alphas: list[float] = []
    betas: list[float] = []

    def ensure_capacity(width: int):
        nonlocal q, cap
        if width <= cap:
            return
        new_cap = min(max_iter, max(2 * cap, width))
        grown = np.zeros((n, new_cap), order="F")
        grown[:, :cap] = q
        q, cap = grown, new_cap

    j = 0
    check_every = 10
    restarts = 0
    max_restarts = max(4, k)
    while j < max_iter:
        w = a @ q[:, j]
        if j > 0:
            w -= betas[j - 1] * q[:, j - 1]
        alphas.append(float(q[:, j] @ w))
        w -= alphas[j] * q[:, j]
        # full reorthogonalisation, twice for float safety
        for _ in range(2):
            w -= q[:, : j + 1] @ (q[:, : j + 1].T @ w)
        beta = float(np.linalg.norm(w))
        m = j + 1
        settled = False
        if m >= k and (m % check_every == 0 or beta < 1e-13 or m == max_iter):
            theta, s_mat = scipy.linalg.eigh_tridiagonal(
                np.asarray(alphas), np.asarray(betas[: m - 1]))
            settled = bool(np.all(abs(beta) * np.abs(s_mat[-1, :k]) <= 0.1 * tol))
        if beta < 1e-13:
            # invariant subspace: restart with a fresh orthogonal direction,
            # which is the only way a missed multiplicity can surface
            if m >= n or restarts >= max_restarts:
                j = m
                break
            v = rng.standard_normal(n)
            for _ in range(2):
                v -= q[:, : j + 1] @ (q[:, : j + 1].T @ v)
            nv = float(np.linalg.norm(v))
            if nv < 1e-12:
                j = m
                break
            q_next = v / nv
            beta = 0.0
            restarts += 1
        elif settled:
            j = m
            break
        else:
            q_next = w / beta
        if m < max_iter:
            ensure_capacity(m + 1)
            q[:, m] = q_next
        betas.append(beta)
        j += 1
    m = len(alphas)
    theta, s_mat = scipy.linalg.eigh_tridiagonal(
        np.asarray(alphas), np.asarray(betas[: m - 1]))
    kk = min(k, len(theta))
    ritz_vectors = q[:, :m] @ s_mat[:, :kk]
    eigenvalues = theta[:kk]
    residuals = np.array([
        float(np.linalg.norm(a @ ritz_vectors[:, i] - eigenvalues[i] * ritz_vectors[:, i]))
        for i in range(kk)
    ])
    converged = bool(len(eigenvalues) == k and np.all(residuals <= tol))
    return SpectrumResult(eigenvalues=np.asarray(eigenvalues),
                          residual_norms=residuals, iterations=m,
                          converged=converged, grid=grid)


@dataclass(frozen=True)
class EigenCount:
    count: int
    is_lower_bound: bool
    largest_converged: float


def eigen_count_below(h: SparseSymmetricOperator, lam: float,
                      budget: int = 50, tol: float = 1e-6,
                      max_iter: int = 2000, seed: int = 0,
                      k_start: int = 8) -> EigenCount:
    """Number of eigenvalues below lam, by growing the Lanczos extraction.

    If the budget is exhausted before a converged Ritz value exceeds lam the
    count is flagged as a lower bound.  `k_start` seeds the extraction ladder
    (useful when the expected count is roughly known).
    """
    k = min(k_start, budget, h.dim - 1)
    while True:
        result = lanczos_lowest(h, k=k, tol=tol, max_iter=max_iter, seed=seed)
        ev = result.eigenvalues
        top = float(ev[-1])
        if top > lam:
            return EigenCount(count=int(np.sum(ev < lam)), is_lower_bound=False,
                              largest_converged=top)
        if k >= min(budget, h.dim - 1):
            return EigenCount(count=int(np.sum(ev < lam)), is_lower_bound=True,
                              largest_converged=top)
        k = min(budget, h.dim - 1, 2 * k)


@dataclass(frozen=True)
class BoxStudyRow:
    grid: Grid3
    eigenvalues: np.ndarray
    residual_norms: np.ndarray
    rel_change: np.ndarray | None


@dataclass(frozen=True)
class BoxStudy:
    alpha: float
    rows: list


def box_convergence_study(alpha: float, s: MetivierStructure, grids,
                          k: int, tol: float = 1e-6, max_iter: int = 2000,
                          seed: int = 0, potential=None) -> BoxStudy:
    """Lowest-k eigenvalues over a nested family of boxes.

    Dirichlet eigenvalues are non-increasing along nested aligned grids; a
    stabilising tail is the discrete-spectrum signal, growing counts the
    opposite one.
    """
    grids = list(grids)
    for g0, g1 in zip(grids, grids[1:]):
        if g1.lx < g0.lx or g1.lt < g0.lt:
            raise ValueError("grids must be nested (non-decreasing half-widths)")
    rows = []
    prev = None
    for g in grids:
        op = assemble_operator(alpha, s, g, potential=potential)
        res = lanczos_lowest(op, k=k, tol=tol, max_iter=max_iter, seed=seed, grid=g)
        rel = None
        if prev is not None:
            m = min(len(prev), len(res.eigenvalues))
            denom = np.maximum(np.abs(prev[:m]), 1e-30)
            rel = np.abs(res.eigenvalues[:m] - prev[:m]) / denom
        rows.append(BoxStudyRow(grid=g, eigenvalues=res.eigenvalues,
                                residual_norms=res.residual_norms, rel_change=rel))
        prev = res.eigenvalues
    return BoxStudy(alpha=alpha, rows=rows)
