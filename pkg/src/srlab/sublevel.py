"""Sublevel sets of the potential, Monte Carlo measures, and thinness integrals.

For alpha > 2 the set Omega = {V_alpha <= M} is confined to a cylinder
|x| <= c(alpha, M) and becomes polynomially thin along the centre: the
measure of Omega inside a ball around (x, t) decays like |t|^{n(2-alpha)}.
This module computes the cylinder radius by inverting the sandwich lower
bound, estimates ball-intersection measures and the truncated thinness
integral by seeded Monte Carlo, attaches an analytic tail bound (finite
exactly when ell > m / (n (alpha - 2))), and fits the decay exponent.

All sampling is counter-seeded: identical inputs and seed reproduce every
estimate bit for bit, regardless of the worker count used for the outer
loop (workers only fill disjoint slots of a preallocated array).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .group import GroupPoint, MetivierStructure
from .norms import norm_xt, quasi_distance_xt
from .potential import (PotentialConstants, potential_bounds,
                        potential_value_xt)


def worker_count() -> int:
    env = os.environ.get("SRL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic child generator addressed by an integer key path."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def ball_volume(dim: int, radius: float) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0) * radius ** dim


def uniform_ball(rng: np.random.Generator, count: int, dim: int,
                 radius: float) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    u = rng.uniform(size=(count, 1)) ** (1.0 / dim)
    return v * u * radius


@dataclass(frozen=True)
class SublevelSpec:
    alpha: float
    level: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def in_sublevel_xt(spec: SublevelSpec, s: MetivierStructure, x, t) -> np.ndarray:
    """Membership V_alpha(x, t) <= level, batched.

    At the identity V extends by 0 when alpha >= 2; for alpha < 2 the
    identity is rejected (the potential has no value there).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.atleast_2d(np.asarray(t, dtype=float))
    n = norm_xt(x, t)
    at_identity = n == 0.0
    if np.any(at_identity):
        if spec.alpha < 2:
            raise ValueError("V_alpha undefined at the identity for alpha < 2")
        out = np.empty(n.shape, dtype=bool)
        out[at_identity] = 0.0 <= spec.level
        ok = ~at_identity
        out[ok] = potential_value_xt(spec.alpha, s, x[ok], t[ok]) <= spec.level
        return out
    return potential_value_xt(spec.alpha, s, x, t) <= spec.level


def in_sublevel(spec: SublevelSpec, s: MetivierStructure, p: GroupPoint) -> bool:
    s.check_point(p)
    return bool(in_sublevel_xt(spec, s, p.x[None, :], p.t[None, :])[0])


def lower_envelope(const: PotentialConstants, u) -> np.ndarray:
    """phi(u) = inf over N >= u of the sandwich lower bound at |x| = u.

    The bound L(u, N) = u^2 (c_a1 N^{2a-4} - c_a2 N^{a-4}) is increasing in
    N for 2 < a <= 4, so the infimum sits at N = u; for a > 4 it sits at
    max(u, N_s) with N_s^a = c_a2 (a-4) / (c_a1 (2a-4)).
    """
    a = const.alpha
    if a <= 2:
        raise ValueError("lower envelope needs alpha > 2")
    u = np.asarray(u, dtype=float)
    n_star = u.copy()
    if a > 4:
        ns = (const.c_a2 * (a - 4.0) / (const.c_a1 * (2.0 * a - 4.0))) ** (1.0 / a)
        n_star = np.maximum(u, ns)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = u * u * (const.c_a1 * n_star ** (2.0 * a - 4.0)
                       - const.c_a2 * n_star ** (a - 4.0))
    return np.where(u == 0.0, 0.0, val)


def cylinder_radius(spec: SublevelSpec, s: MetivierStructure,
                    est=None) -> float:
    """Radius c with |x| <= c for every member of the sublevel set.

    Inverts the lower envelope: c = sup { u : phi(u) <= level }, located by a
    dense scan plus bisection, with a relative safety margin so the bound
    stays an enclosure under floating point.  Returns 0 when the envelope
    never dips to the level (empty sublevel set).
    """
    if spec.alpha <= 2:
        raise ValueError("cylinder confinement requires alpha > 2")
    const = potential_bounds(spec.alpha, est, s)
    u_hi = 1.0
    while lower_envelope(const, np.array([u_hi]))[0] <= max(spec.level, 0.0) and u_hi < 1e12:
        u_hi *= 2.0
    u_hi *= 2.0
    grid = np.linspace(0.0, u_hi, 16385)[1:]
    ok = lower_envelope(const, grid) <= spec.level
    if not np.any(ok):
        return 0.0
    i = int(np.nonzero(ok)[0][-1])
    lo = grid[i]
    hi = grid[i + 1] if i + 1 < grid.size else u_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if lower_envelope(const, np.array([mid]))[0] <= spec.level:
            lo = mid
        else:
            hi = mid
    return float(hi * (1.0 + 1e-9))


def _twist_bound(s: MetivierStructure) -> float:
    """kappa with |sum_k (J_k a, b) u_k| <= kappa |a| |b|, via singular values."""
    sv = np.array([np.linalg.svd(j, compute_uv=False)[0] for j in s.maps])
    return float(np.sqrt(np.sum(sv ** 2)))


def bounding_cylinder(s: MetivierStructure, center: GroupPoint, r: float):
    """(rho_x, rho_t): B(center, r) lies inside {|xi| <= rho_x, |tau - tc| <= rho_t}.

    The x-part is |xc| + r; the central part combines the ball's own central
    reach r^2/4 with the largest possible twist of the group product over
    the x-range, bounded through the maps' singular values (no unproven
    quasi-triangle constant is needed).
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    xc_norm = float(np.linalg.norm(center.x))
    rho_x = xc_norm + r
    rho_t = 0.25 * r * r + 0.5 * _twist_bound(s) * xc_norm * rho_x
    return rho_x, rho_t


def _tube_radius(const: PotentialConstants, level: float, n_min: float):
    """Largest |x| compatible with membership when every point has N >= n_min.

    Valid when the envelope factor ell(N) = c_a1 N^{2a-4} - c_a2 N^{a-4} is
    positive and nondecreasing beyond n_min; returns None when unusable and
    0.0 when membership is impossible (level below the floor on the region).
    """
    a = const.alpha
    if a > 4:
        ns = (const.c_a2 * (a - 4.0) / (const.c_a1 * (2.0 * a - 4.0))) ** (1.0 / a)
        if n_min < ns:
            return None
    ell = const.c_a1 * n_min ** (2.0 * a - 4.0) - const.c_a2 * n_min ** (a - 4.0)
    if ell <= 0.0:
        return None
    if level < 0.0:
        return 0.0
    return math.sqrt(level / ell)


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    std_error: float
    n_samples: int
    region_volume: float
    hit_count: int
    seed: int


def ball_intersection_volume(spec: SublevelSpec, s: MetivierStructure,
                             center: GroupPoint, r: float, n_samples: int,
                             seed: int = 0,
                             rng: np.random.Generator | None = None) -> VolumeEstimate:
    """Monte Carlo measure of (sublevel set) intersect B(center, r).

    Uniform samples in the exact bounding cylinder of the ball (tightened by
    the cylinder radius and the central tube bound when alpha > 2) are scored
    by ball membership and sublevel membership and scaled by the region
    volume.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    s.check_point(center)
    rho_x, rho_t = bounding_cylinder(s, center, r)
    if spec.alpha > 2:
        const = potential_bounds(spec.alpha, None, s)
        rho_x = min(rho_x, cylinder_radius(spec, s))
        t_norm = float(np.linalg.norm(center.t))
        if t_norm > rho_t:
            n_min = (16.0 * (t_norm - rho_t) ** 2) ** 0.25
            tube = _tube_radius(const, spec.level, n_min)
            if tube is not None:
                rho_x = min(rho_x, tube * (1.0 + 1e-12))
    if rho_x == 0.0:
        return VolumeEstimate(0.0, 0.0, n_samples, 0.0, 0, seed)
    if rng is None:
        rng = substream(seed, 0)
    xi = uniform_ball(rng, n_samples, s.horizontal_dim, rho_x)
    tau = uniform_ball(rng, n_samples, s.m, rho_t) + center.t
    vol = ball_volume(s.horizontal_dim, rho_x) * ball_volume(s.m, rho_t)
    hits = quasi_distance_xt(s, center.x, center.t, xi, tau) < r
    if np.any(hits):
        sub = np.zeros(n_samples, dtype=bool)
        sub[hits] = in_sublevel_xt(spec, s, xi[hits], tau[hits])
        score = (hits & sub).astype(float)
    else:
        score = np.zeros(n_samples)
    mean = float(score.mean())
    se = float(score.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return VolumeEstimate(value=vol * mean, std_error=vol * se,
                          n_samples=n_samples, region_volume=vol,
                          hit_count=int(score.sum()), seed=seed)


def threshold_k(spec: SublevelSpec, s: MetivierStructure, r: float,
                center_x_norm: float = 0.0) -> float:
    """Central height beyond which the envelope factor exceeds half its top.

    Smallest k with c_a2 / (k - rho_t)^{a/2} <= c_a1 / 2, i.e.
    k = rho_t + (2 c_a2 / c_a1)^{2/a}, with rho_t the central reach of the
    bounding cylinder.
    """
    const = potential_bounds(spec.alpha, None, s)
    c = cylinder_radius(spec, s)
    xc = min(center_x_norm, c)
    rho_t = 0.25 * r * r + 0.5 * _twist_bound(s) * xc * (xc + r)
    return rho_t + (2.0 * const.c_a2 / const.c_a1) ** (2.0 / const.alpha)


@dataclass(frozen=True)
class ThinnessEstimate:
    ell: float
    r: float
    value: float
    std_error: float
    outer_samples: int
    inner_samples: int
    truncation_T: float
    tail_bound: float
    tail_finite: bool
    ell_threshold: float
    threshold_k: float
    seed: int


def _tail_bound(spec: SublevelSpec, s: MetivierStructure, r: float,
                ell: float, t_from: float) -> float:
    """Rigorous bound for the thinness integrand beyond |t| = t_from.

    Uses |Omega cap B(y, r)| <= vol_2n(tube(|t|)) * vol_m(rho_t) pointwise and
    integrates the ell-th power over {|x| <= c, |t| > max(t_from, k)} in log
    space; the finite band [t_from, k] is bounded by the cylinder measure.
    """
    const = potential_bounds(spec.alpha, None, s)
    c = cylinder_radius(spec, s)
    if c == 0.0:
        return 0.0
    rho_t = 0.25 * r * r + 0.5 * _twist_bound(s) * c * (c + r)
    k = threshold_k(spec, s, r, center_x_norm=c)
    t_eff = max(t_from, k)
    dim_x = s.horizontal_dim
    m = s.m
    box_measure = ball_volume(dim_x, c)
    slab = ball_volume(m, rho_t)

    band = 0.0
    if t_eff > t_from:
        beta_max = box_measure * slab
        band = box_measure * beta_max ** ell * (ball_volume(m, t_eff) - ball_volume(m, t_from))

    # log beta(s) = log slab + log vol_2n(min(c, tube(s)))
    y = (np.arange(20000) + 0.5) * (1.0 / 20000.0)
    delta = -(ell * s.n * (2.0 - spec.alpha) + m)
    if delta <= 0:
        return math.inf
    y_max = 60.0 / delta + 10.0
    ys = y * y_max
    svals = t_eff * np.exp(ys)
    n_min = (16.0 * (svals - rho_t) ** 2) ** 0.25
    # ell(N) in log space: log c_a1 + (2a-4) log N + log1p(-(c_a2/c_a1) N^-a)
    a = const.alpha
    log_n = np.log(n_min)
    log_ell_n = (math.log(const.c_a1) + (2.0 * a - 4.0) * log_n
                 + np.log1p(-(const.c_a2 / const.c_a1) * np.exp(-a * log_n)))
    log_tube_sq = math.log(max(spec.level, 0.0)) - log_ell_n if spec.level > 0 else None
    if log_tube_sq is None:
        return band
    log_tube = 0.5 * log_tube_sq
    log_tube = np.minimum(log_tube, math.log(c))
    log_vol_coeff = math.log(math.pi ** (dim_x / 2.0) / math.gamma(dim_x / 2.0 + 1.0))
    log_beta = math.log(slab) + log_vol_coeff + dim_x * log_tube
    surface_m = m * math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)
    log_integrand = ell * log_beta + m * (math.log(t_eff) + ys)
    peak = float(np.max(log_integrand))
    tail = math.exp(peak) * float(np.sum(np.exp(log_integrand - peak))) * (y_max / 20000.0)
    return band + box_measure * surface_m * tail


def thinness_integral(spec: SublevelSpec, s: MetivierStructure, r: float,
                      ell: float, truncation_T: float = 64.0,
                      outer_samples: int = 100_000, inner_samples: int = 10_000,
                      seed: int = 0) -> ThinnessEstimate:
    """MC estimate of the truncated thinness integral with analytic tail.

        integral over {y in Omega, |t(y)| <= T} of |Omega cap B(y, r)|^ell,

    outer points uniform in the confining cylinder {|x| <= c, |t| <= T},
    inner measures by `ball_intersection_volume` with per-member substreams.
    The tail beyond T is bounded analytically and is finite exactly when
    ell > m / (n (alpha - 2)).
    """
    if spec.alpha <= 2:
        raise ValueError("thinness experiment requires alpha > 2")
    if ell <= 0:
        raise ValueError("ell must be positive")
    if outer_samples < 1 or inner_samples < 1:
        raise ValueError("sample counts must be >= 1")
    ell_threshold = s.m / (s.n * (spec.alpha - 2.0))
    c = cylinder_radius(spec, s)
    kval = threshold_k(spec, s, r, center_x_norm=c)
    if c == 0.0:
        return ThinnessEstimate(ell=ell, r=r, value=0.0, std_error=0.0,
                                outer_samples=outer_samples,
                                inner_samples=inner_samples,
                                truncation_T=truncation_T, tail_bound=0.0,
                                tail_finite=True, ell_threshold=ell_threshold,
                                threshold_k=kval, seed=seed)
    rng = substream(seed, 0)
    xi = uniform_ball(rng, outer_samples, s.horizontal_dim, c)
    tau = uniform_ball(rng, outer_samples, s.m, truncation_T)
    outer_volume = ball_volume(s.horizontal_dim, c) * ball_volume(s.m, truncation_T)
    member = in_sublevel_xt(spec, s, xi, tau)
    idx = np.nonzero(member)[0]
    scores = np.zeros(outer_samples)

    def run_member(pos: int) -> float:
        i = int(idx[pos])
        center = GroupPoint(xi[i], tau[i])
        est = ball_intersection_volume(spec, s, center, r, inner_samples,
                                       rng=substream(seed, 1, i))
        return est.value ** ell

    if idx.size:
        results = np.zeros(idx.size)
        workers = worker_count()
        if workers > 1 and idx.size > 8:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for pos, val in enumerate(pool.map(run_member, range(idx.size))):
                    results[pos] = val
        else:
            for pos in range(idx.size):
                results[pos] = run_member(pos)
        scores[idx] = results

    value = outer_volume * float(scores.mean())
    se = outer_volume * float(scores.std(ddof=1) / math.sqrt(outer_samples))
    tail_finite = ell > ell_threshold
    tail = _tail_bound(spec, s, r, ell, truncation_T) if tail_finite else math.inf
    return ThinnessEstimate(ell=ell, r=r, value=value, std_error=se,
                            outer_samples=outer_samples,
                            inner_samples=inner_samples,
                            truncation_T=truncation_T, tail_bound=tail,
                            tail_finite=tail_finite,
                            ell_threshold=ell_threshold, threshold_k=kval,
                            seed=seed)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    slope_stderr: float
    ci95: float
    expected_slope: float
    t_values: tuple
    estimates: tuple
    std_errors: tuple
    samples: int
    seed: int


def scaling_fit(spec: SublevelSpec, s: MetivierStructure, r: float,
                t_values, samples: int, seed: int = 0,
                center_x: np.ndarray | None = None) -> ScalingFit:
    """Least-squares slope of log |Omega cap B(y, r)| against log |t|.

    Centers ride along the centre at y = (center_x, t u_1); all t values
    must lie beyond the threshold k of the thinness lemma.  A zero estimate
    is retried once with 4x samples, then reported as failure.
    """
    if spec.alpha <= 2:
        raise ValueError("scaling fit requires alpha > 2")
    t_values = [float(v) for v in t_values]
    if len(t_values) < 4:
        raise ValueError("need at least 4 central heights")
    if center_x is None:
        center_x = np.zeros(s.horizontal_dim)
        center_x[0] = 0.5
    center_x = np.asarray(center_x, dtype=float)
    kval = threshold_k(spec, s, r, center_x_norm=float(np.linalg.norm(center_x)))
    if min(t_values) <= kval:
        raise ValueError(f"all central heights must exceed the threshold k = {kval:.3f}")
    estimates, std_errors = [], []
    for pos, tv in enumerate(t_values):
        tc = np.zeros(s.m)
        tc[0] = tv
        center = GroupPoint(center_x, tc)
        est = ball_intersection_volume(spec, s, center, r, samples,
                                       rng=substream(seed, 2, pos))
        if est.value == 0.0:
            est = ball_intersection_volume(spec, s, center, r, 4 * samples,
                                           rng=substream(seed, 3, pos))
        if est.value == 0.0:
            raise RuntimeError(f"no sublevel mass found near t = {tv}; widen samples")
        estimates.append(est.value)
        std_errors.append(est.std_error)
    lx = np.log(np.asarray(t_values))
    ly = np.log(np.asarray(estimates))
    xbar = lx.mean()
    sxx = float(np.sum((lx - xbar) ** 2))
    slope = float(np.sum((lx - xbar) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * xbar)
    sigma_log = np.asarray(std_errors) / np.asarray(estimates)
    slope_se = float(np.sqrt(np.sum(((lx - xbar) / sxx) ** 2 * sigma_log ** 2)))
    return ScalingFit(slope=slope, intercept=intercept, slope_stderr=slope_se,
                      ci95=1.96 * slope_se,
                      expected_slope=s.n * (2.0 - spec.alpha),
                      t_values=tuple(t_values), estimates=tuple(estimates),
                      std_errors=tuple(std_errors), samples=samples, seed=seed)
