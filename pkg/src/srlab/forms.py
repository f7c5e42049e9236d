"""Analytic test functions, quadrature of the energy forms, and Weyl translates.

Test functions expose exact Euclidean derivatives up to second order; the
left-invariant calculus is then pure chain rule through the horizontal
fields X_j = d/dx_j + (1/2) sum_k (J_k x, e_j) d/dt_k.  Because the
coefficient of d/dt_k in X_j does not depend on x_j or t,

    sum_j X_j^2 f = tr Hxx + 2 sum_{jk} c_{jk} Hxt_{jk}
                    + sum_{kl} (sum_j c_{jk} c_{jl}) Htt_{kl},

with c_{jk}(x) = (1/2)(J_k x)_j.  Only integrals carry discretisation
error: the tensor midpoint rule is O(h^2) with positive weights, and numpy's
pairwise summation makes every reduction bit-stable run to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .group import GroupPoint, MetivierStructure
from .norms import norm_xt, weight_xt
from .potential import grad_kaplan_xt, potential_value_xt


def bump_profile(sq: np.ndarray):
    """Flat profile g(s) = exp(-1/(1-s)) for s < 1, 0 otherwise, with g', g''.

    g'  = -g / (1-s)^2
    g'' = g (2s - 1) / (1-s)^4
    All three vanish smoothly at s = 1; evaluation is guarded so the
    rational factors are never formed where g underflows to zero.
    """
    sq = np.asarray(sq, dtype=float)
    inside = sq < 1.0 - 1e-9
    one_ms = np.where(inside, 1.0 - sq, 1.0)
    g = np.where(inside, np.exp(-1.0 / one_ms), 0.0)
    g1 = np.where(inside, -g / one_ms ** 2, 0.0)
    g2 = np.where(inside, g * (2.0 * sq - 1.0) / one_ms ** 4, 0.0)
    return g, g1, g2


@dataclass(frozen=True)
class SmoothBump:
    """Product bump psi(x, t) = g(|x|^2 / a^2) g(|t|^2 / b^2).

    Supported in {|x| <= a} x {|t| <= b}; psi and all derivatives vanish on
    the support boundary, and psi(identity) = g(0)^2 = e^{-2} > 0.
    """

    x_radius: float
    t_radius: float

    def __post_init__(self):
        if self.x_radius <= 0 or self.t_radius <= 0:
            raise ValueError("bump radii must be positive")

    def center(self, s: MetivierStructure) -> GroupPoint:
        return GroupPoint(np.zeros(s.horizontal_dim), np.zeros(s.m))

    def support_box(self, s: MetivierStructure):
        """(x_extent, t_extent) per axis around the center."""
        return (np.full(s.horizontal_dim, self.x_radius),
                np.full(s.m, self.t_radius))

    def value(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        gx, _, _ = bump_profile(np.einsum("...i,...i->...", x, x) / self.x_radius ** 2)
        gt, _, _ = bump_profile(np.einsum("...i,...i->...", t, t) / self.t_radius ** 2)
        return gx * gt

    def derivatives(self, x, t):
        """(value, gx, gt, hxx, hxt, htt) with batch shape (..., dims)."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        a2 = self.x_radius ** 2
        b2 = self.t_radius ** 2
        sx = np.einsum("...i,...i->...", x, x) / a2
        st = np.einsum("...i,...i->...", t, t) / b2
        u, u1, u2 = bump_profile(sx)
        v, v1, v2 = bump_profile(st)
        dx = 2.0 * x / a2                      # d s_x / d x
        dt = 2.0 * t / b2
        val = u * v
        gx = (u1 * v)[..., None] * dx
        gt = (u * v1)[..., None] * dt
        eye_x = np.eye(x.shape[-1])
        eye_t = np.eye(t.shape[-1])
        hxx = ((u2 * v)[..., None, None] * dx[..., :, None] * dx[..., None, :]
               + (u1 * v)[..., None, None] * (2.0 / a2) * eye_x)
        htt = ((u * v2)[..., None, None] * dt[..., :, None] * dt[..., None, :]
               + (u * v1)[..., None, None] * (2.0 / b2) * eye_t)
        hxt = (u1 * v1)[..., None, None] * dx[..., :, None] * dt[..., None, :]
        return val, gx, gt, hxx, hxt, htt


@dataclass(frozen=True)
class TranslatedBump:
    """Left translate p -> psi(g^{-1} p) of a bump by a group element g.

    The pulled-back argument is an affine map of (x, t), so exact Euclidean
    derivatives follow from the constant Jacobian; the horizontal calculus
    then satisfies X_j (psi o L) = (X_j psi) o L identically.
    """

    bump: SmoothBump
    structure: MetivierStructure
    translation: GroupPoint

    def center(self, s: MetivierStructure) -> GroupPoint:
        return self.translation

    def support_box(self, s: MetivierStructure):
        bx, bt = self.bump.support_box(s)
        xc = self.translation.x
        # |t_q| <= b with t_q = t - tc - (1/2) sum_k (J_k xc, x) u_k widens the
        # t-extent by the largest possible twist over the x-support.
        sv = np.array([np.linalg.svd(j, compute_uv=False)[0] for j in s.maps])
        twist = 0.5 * sv * np.linalg.norm(xc) * (np.linalg.norm(xc) + self.bump.x_radius)
        return bx + np.abs(xc), bt + twist

    def _pullback(self, x, t):
        from .group import product
        xc, tc = self.translation.x, self.translation.t
        return product(self.structure, -xc, -tc, x, t)

    def _jacobian_tx(self) -> np.ndarray:
        """G with G[k, i] = d t_q[k] / d x[i] = -(1/2) (J_k xc)_i."""
        xc = self.translation.x
        return -0.5 * np.einsum("kij,j->ki", self.structure.maps, xc)

    def value(self, x, t) -> np.ndarray:
        xq, tq = self._pullback(x, t)
        return self.bump.value(xq, tq)

    def derivatives(self, x, t):
        xq, tq = self._pullback(x, t)
        val, gx, gt, hxx, hxt, htt = self.bump.derivatives(xq, tq)
        g = self._jacobian_tx()
        gx_p = gx + np.einsum("ki,...k->...i", g, gt)
        # Hess_f = DA^T Hess_psi DA with DA = [[I, 0], [G, I]]:
        #   Hxx_f = Hxx + G^T Htx + Hxt G + G^T Htt G,  Hxt_f = Hxt + G^T Htt
        hxx_p = (hxx
                 + np.einsum("ki,...jk->...ij", g, hxt)
                 + np.einsum("...ik,kj->...ij", hxt, g)
                 + np.einsum("ki,...kl,lj->...ij", g, htt, g))
        hxt_p = hxt + np.einsum("li,...lk->...ik", g, htt)
        return val, gx_p, gt, hxx_p, hxt_p, htt


def horizontal_coefficients(s: MetivierStructure, x) -> np.ndarray:
    """c with c[..., j, k] = (1/2)(J_k x)_j, the d/dt_k coefficient of X_j."""
    return 0.5 * np.einsum("kji,...i->...jk", s.maps, np.asarray(x, dtype=float))


def horizontal_gradient(s: MetivierStructure, f, x, t) -> np.ndarray:
    """(X_1 f, ..., X_{2n} f) at each point, shape (..., 2n)."""
    _, gx, gt, _, _, _ = f.derivatives(x, t)
    c = horizontal_coefficients(s, x)
    return gx + np.einsum("...jk,...k->...j", c, gt)


def apply_xj(s: MetivierStructure, f, j: int, p: GroupPoint) -> float:
    if not 0 <= j < s.horizontal_dim:
        raise ValueError(f"horizontal index {j} out of range [0, {s.horizontal_dim})")
    return float(np.squeeze(horizontal_gradient(s, f, p.x, p.t)[..., j]))


def sub_laplacian_apply(s: MetivierStructure, f, x, t) -> np.ndarray:
    """L f = -sum_j X_j^2 f, exact chain rule, batched."""
    _, gx, gt, hxx, hxt, htt = f.derivatives(x, t)
    c = horizontal_coefficients(s, x)
    term1 = np.einsum("...jj->...", hxx)
    term2 = 2.0 * np.einsum("...jk,...jk->...", c, hxt)
    m = np.einsum("...jk,...jl->...kl", c, c)
    term3 = np.einsum("...kl,...kl->...", m, htt)
    return -(term1 + term2 + term3)


def apply_sub_laplacian(s: MetivierStructure, f, p: GroupPoint) -> float:
    return float(np.squeeze(sub_laplacian_apply(s, f, p.x, p.t)))


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product midpoint rule on a box centred at a group point.

    Horizontal axes share half-width `x_half` and count `nx`; central axes
    share `t_half` and count `nt`.  Nodes are cell midpoints.
    """

    s: MetivierStructure
    x_half: float
    t_half: float
    nx: int
    nt: int
    center_x: np.ndarray | None = None
    center_t: np.ndarray | None = None

    def __post_init__(self):
        if self.nx < 2 or self.nt < 2:
            raise ValueError("need at least 2 points per axis")
        if self.x_half <= 0 or self.t_half <= 0:
            raise ValueError("half-widths must be positive")
        cx = np.zeros(self.s.horizontal_dim) if self.center_x is None else np.asarray(self.center_x, float)
        ct = np.zeros(self.s.m) if self.center_t is None else np.asarray(self.center_t, float)
        object.__setattr__(self, "center_x", cx)
        object.__setattr__(self, "center_t", ct)

    @property
    def hx(self) -> float:
        return 2.0 * self.x_half / self.nx

    @property
    def ht(self) -> float:
        return 2.0 * self.t_half / self.nt

    @property
    def cell_volume(self) -> float:
        return self.hx ** self.s.horizontal_dim * self.ht ** self.s.m

    def axis_nodes(self, half: float, count: int) -> np.ndarray:
        h = 2.0 * half / count
        return -half + (np.arange(count) + 0.5) * h

    def nodes(self):
        """Flattened node coordinates (x of shape (Nd, 2n), t of shape (Nd, m))."""
        ax_x = [self.axis_nodes(self.x_half, self.nx) + self.center_x[i]
                for i in range(self.s.horizontal_dim)]
        ax_t = [self.axis_nodes(self.t_half, self.nt) + self.center_t[k]
                for k in range(self.s.m)]
        mesh = np.meshgrid(*ax_x, *ax_t, indexing="ij")
        flat = [m.reshape(-1) for m in mesh]
        x = np.stack(flat[: self.s.horizontal_dim], axis=-1)
        t = np.stack(flat[self.s.horizontal_dim:], axis=-1)
        return x, t

    def covers(self, f) -> bool:
        bx, bt = f.support_box(self.s)
        cx = f.center(self.s).x
        ct = f.center(self.s).t
        ok_x = np.all(cx - bx >= self.center_x - self.x_half - 1e-12) and \
            np.all(cx + bx <= self.center_x + self.x_half + 1e-12)
        ok_t = np.all(ct - bt >= self.center_t - self.t_half - 1e-12) and \
            np.all(ct + bt <= self.center_t + self.t_half + 1e-12)
        return bool(ok_x and ok_t)

    def refined(self, factor: int = 2) -> "QuadratureGrid":
        return QuadratureGrid(self.s, self.x_half, self.t_half,
                              self.nx * factor, self.nt * factor,
                              self.center_x, self.center_t)

    def translated(self, dt: np.ndarray) -> "QuadratureGrid":
        """Shift of the box along the centre; node sets translate exactly."""
        return QuadratureGrid(self.s, self.x_half, self.t_half, self.nx, self.nt,
                              self.center_x, self.center_t + np.asarray(dt, float))


def _require_cover(grid: QuadratureGrid, f):
    if not grid.covers(f):
        raise ValueError("quadrature grid does not cover the support of the integrand")


def dirichlet_form(alpha: float, s: MetivierStructure, f,
                   grid: QuadratureGrid) -> float:
    """integral of |grad_H f|^2 w_alpha over the grid box, midpoint rule."""
    _require_cover(grid, f)
    x, t = grid.nodes()
    hg = horizontal_gradient(s, f, x, t)
    w = weight_xt(alpha, x, t)
    return float(np.einsum("si,si->s", hg, hg) @ w * grid.cell_volume)


def conjugation_residual(alpha: float, s: MetivierStructure, f,
                         grid: QuadratureGrid) -> float:
    """|LHS - RHS| of the ground-state-transform identity

        int |grad_H f|^2 w_alpha = int |grad_H (f sqrt(w_alpha))|^2
                                   + int V_alpha (f sqrt(w_alpha))^2,

    both sides by the same midpoint rule, so the residual is pure O(h^2)
    quadrature error.
    """
    if alpha < 2:
        raise ValueError("conjugation residual requires alpha >= 2 (V bounded below)")
    _require_cover(grid, f)
    x, t = grid.nodes()
    n = norm_xt(x, t)
    if np.any(n == 0.0):
        raise ValueError("grid places a node at the identity; shift counts or center")
    val = f.value(x, t)
    hg = horizontal_gradient(s, f, x, t)
    w = weight_xt(alpha, x, t)
    lhs = np.einsum("si,si->s", hg, hg) @ w * grid.cell_volume

    sqrt_w = np.sqrt(w)
    grad_n = grad_kaplan_xt(s, x, t)
    # X_j (f sqrt(w)) = sqrt(w) (X_j f - (alpha/2) N^{alpha-1} (X_j N) f)
    shifted = hg - 0.5 * alpha * (n ** (alpha - 1.0) * val)[:, None] * grad_n
    phi = val * sqrt_w
    v = potential_value_xt(alpha, s, x, t)
    rhs = (np.einsum("si,si->s", shifted, shifted) @ w
           + (phi * phi) @ v) * grid.cell_volume
    return abs(float(lhs) - float(rhs))


def weyl_sequence(s: MetivierStructure, psi: SmoothBump, n: int) -> "TranslatedBump | SmoothBump":
    """Left translate of the bump by (0, n u_1) along the first central axis."""
    if n < 0:
        raise ValueError("translation index must be nonnegative")
    if n == 0:
        return psi
    shift = np.zeros(s.m)
    shift[0] = float(n)
    return TranslatedBump(psi, s, GroupPoint(np.zeros(s.horizontal_dim), shift))


@dataclass(frozen=True)
class WeylRecord:
    n_index: int
    residual: float
    psi_norm: float
    overlap_check: float
    lam: float


def _translated_nodes(grid: QuadratureGrid, s: MetivierStructure, n: int):
    shift = np.zeros(s.m)
    shift[0] = float(n)
    return grid.translated(shift)


def weyl_residual(alpha: float, s: MetivierStructure, psi: SmoothBump, n: int,
                  lam: float, grid: QuadratureGrid,
                  overlap_partner: int | None = None,
                  _overlap: float | None = None) -> WeylRecord:
    """Quadrature residual ||(lam + L + V_alpha) psi_n||_2 on a grid riding
    with the translate.

    `grid` is the base grid for psi around the identity; it is translated by
    (0, n u_1) so bump and sub-Laplacian values are exact shifts (the
    translation has no horizontal part).  The overlap check evaluates
    ||psi_n - psi_m||^2 for m = overlap_partner (default n + 2 ceil(t_radius),
    which makes the supports disjoint) on a common aligned grid; by the same
    shift-exactness it does not depend on n, and a precomputed value may be
    passed through `_overlap`.
    """
    if n < 2:
        raise ValueError("residual experiment requires n >= 2 (support inside the cylinder)")
    _require_cover(grid, psi)
    moved = _translated_nodes(grid, s, n)
    psi_n = weyl_sequence(s, psi, n)
    _require_cover(moved, psi_n)
    x, t = moved.nodes()
    val = psi_n.value(x, t)
    lpsi = sub_laplacian_apply(s, psi_n, x, t)
    v = potential_value_xt(alpha, s, x, t)
    res_sq = np.sum((lam * val + lpsi + v * val) ** 2) * moved.cell_volume
    norm_sq = np.sum(val * val) * moved.cell_volume

    if _overlap is None:
        if overlap_partner is None:
            overlap_partner = n + max(2, int(math.ceil(2.0 * psi.t_radius)))
        _overlap = _overlap_norm_sq(s, psi, n, overlap_partner, grid)
    return WeylRecord(n_index=n, residual=float(np.sqrt(res_sq)),
                      psi_norm=float(np.sqrt(norm_sq)),
                      overlap_check=float(_overlap), lam=lam)


def _overlap_norm_sq(s: MetivierStructure, psi: SmoothBump, n: int, m: int,
                     grid: QuadratureGrid) -> float:
    """||psi_n - psi_m||_2^2 on one grid covering both supports.

    The common grid keeps the base spacing; for integer shifts and even axis
    counts its nodes around each translate coincide exactly with the base
    grid's nodes around the identity.
    """
    if m <= n:
        raise ValueError("need m > n")
    lo = float(n) - grid.t_half
    hi = float(m) + grid.t_half
    span = hi - lo
    count = int(round(span / grid.ht))
    if abs(count * grid.ht - span) > 1e-9:
        count = int(math.ceil(span / grid.ht))
    center = np.zeros(s.m)
    center[0] = 0.5 * (lo + hi)
    union = QuadratureGrid(s, grid.x_half, 0.5 * count * grid.ht, grid.nx, count,
                           grid.center_x, center)
    x, t = union.nodes()
    diff = weyl_sequence(s, psi, n).value(x, t) - weyl_sequence(s, psi, m).value(x, t)
    return float(np.sum(diff * diff) * union.cell_volume)


@dataclass(frozen=True)
class WeylScan:
    alpha: float
    lam: float
    sup_cylinder: float
    psi_norm: float
    l_psi_norm: float
    bound: float
    records: list


def weyl_scan(alpha: float, s: MetivierStructure, psi: SmoothBump,
              n_values, grid: QuadratureGrid, lam: float | None = None,
              sup_samples: int = 200_000, seed: int = 0) -> WeylScan:
    """Residuals over a family of central translates, with the uniform bound

        (|lam| + C) ||psi||_2 + ||L psi||_2,   C = sup_cylinder |V_alpha|,

    which controls every n >= 2 when alpha <= 2.  When lam is None it
    defaults to 1 + max(0, -floor(V_alpha)) for alpha >= 2 and to 1 + C for
    alpha < 2 (any resolvent-set shift works; the choice is recorded).
    """
    from .potential import cylinder_sup_potential, potential_bounds, sandwich_floor

    sup_c = cylinder_sup_potential(alpha, s, samples=sup_samples, seed=seed)
    if lam is None:
        if alpha >= 2:
            lam = 1.0 + max(0.0, -sandwich_floor(potential_bounds(alpha, None, s)))
        else:
            lam = 1.0 + sup_c
    x, t = grid.nodes()
    val = psi.value(x, t)
    lpsi = sub_laplacian_apply(s, psi, x, t)
    psi_norm = float(np.sqrt(np.sum(val * val) * grid.cell_volume))
    l_psi_norm = float(np.sqrt(np.sum(lpsi * lpsi) * grid.cell_volume))
    bound = (abs(lam) + sup_c) * psi_norm + l_psi_norm if math.isfinite(sup_c) else math.inf
    n_values = [int(n) for n in n_values]
    gap = max(2, int(math.ceil(2.0 * psi.t_radius)))
    overlap = _overlap_norm_sq(s, psi, n_values[0], n_values[0] + gap, grid)
    records = [weyl_residual(alpha, s, psi, n, lam, grid, _overlap=overlap)
               for n in n_values]
    return WeylScan(alpha=alpha, lam=float(lam), sup_cylinder=float(sup_c),
                    psi_norm=psi_norm, l_psi_norm=l_psi_norm, bound=float(bound),
                    records=records)


def fit_loglog_slope(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    ln = np.log(np.asarray(ns, dtype=float))
    lv = np.log(np.asarray(values, dtype=float))
    ln = ln - ln.mean()
    return float((ln @ (lv - lv.mean())) / (ln @ ln))
