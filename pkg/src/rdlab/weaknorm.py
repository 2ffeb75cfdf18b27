"""The weak norm dual to ``{psi : ||Delta psi||_1 <= 1}`` in three dimensions.

For ``N = 3`` every test function satisfies ``psi = -Gamma * Delta psi`` with
``Gamma(x) = 1 / (4 pi |x|)``, hence ``<f, psi> = -<Gamma * f, Delta psi>``
and ``|<f, psi>| <= ||Gamma * f||_inf`` whenever ``||Delta psi||_1 <= 1``.
Letting ``-Delta psi`` concentrate at the maximiser of the potential shows
the bound is sharp, so the norm is evaluated as the maximum of the Newtonian
potential.  :func:`ball_family_sup` checks this against an explicit family
of test functions.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import integrate as sint

from .grid import ball_mask, boundary_mass_fraction, grad_sqrt_density, integrate, sphere_area
from .reports import PropertyReport

BOUNDARY_TOL = 1e-6


class PreconditionError(ValueError):
    pass


def self_cell_value(h):
    """Potential at the center of a unit-density ball with the volume of one cell."""
    R = (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0) * h
    return 0.5 * R * R


@functools.lru_cache(maxsize=8)
def _kernel_hat(grid):
    """Transform of ``h^3 Gamma`` sampled on the doubled grid (self cell by the ball value)."""
    n2 = 2 * grid.n
    j = np.arange(n2)
    j = np.where(j < grid.n, j, j - n2) * grid.h
    r2 = 0.0
    for d in range(3):
        s = [1, 1, 1]
        s[d] = n2
        r2 = r2 + j.reshape(s) ** 2
    r = np.sqrt(r2)
    with np.errstate(divide="ignore"):
        k = grid.cell_volume / (4.0 * math.pi * r)
    k[0, 0, 0] = self_cell_value(grid.h)
    return sfft.rfftn(k)


@dataclass
class PotentialField:
    values: np.ndarray
    grid: object
    boundary_fraction: float
    kernel_meta: dict

    @property
    def max(self):
        return float(np.max(self.values))

    def argmax_point(self):
        idx = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return [float(-0.5 * self.grid.L + i * self.grid.h) for i in idx]


def newtonian_potential(f, grid, strict=False):
    """``Gamma * f`` on the grid by zero-padded FFT convolution (free-space, no wrap-around)."""
    if grid.N != 3:
        raise PreconditionError(f"the Newtonian potential is only supported for N = 3 (got N = {grid.N})")
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"source shape {f.shape} does not match grid {grid.shape}")
    frac = boundary_mass_fraction(grid, np.abs(f))
    if strict and frac >= BOUNDARY_TOL:
        raise PreconditionError(f"boundary mass fraction {frac:.3g} >= {BOUNDARY_TOL}")
    n2 = (2 * grid.n,) * 3
    pot = sfft.irfftn(sfft.rfftn(f, s=n2) * _kernel_hat(grid), s=n2)
    pot = pot[: grid.n, : grid.n, : grid.n]
    meta = {"N": 3, "normalization": "1/(4 pi |x|)", "self_cell": self_cell_value(grid.h), "padding": 2}
    return PotentialField(pot, grid, frac, meta)


def weak_norm(f, grid, strict=False):
    return newtonian_potential(f, grid, strict).max


@dataclass
class WeakNormReport:
    t: float
    norm: float
    argmax: list
    boundary_fraction: float = 0.0

    def to_dict(self):
        return {"t": self.t, "norm": self.norm, "argmax": self.argmax}


def weak_norm_report(field):
    p = newtonian_potential(field.total(), field.grid)
    return WeakNormReport(float(field.t), p.max, p.argmax_point(), p.boundary_fraction)


@dataclass
class MonotonicityResult:
    reports: list
    max_rel_increase: float
    tol: float = 1e-2

    @property
    def passed(self):
        return self.max_rel_increase <= self.tol


def monotonicity_check(slab, tol=1e-2, norms=None):
    """Weak norm of the total mass at every snapshot and its largest relative increase."""
    if norms is None:
        reports = [weak_norm_report(s) for s in slab]
    else:
        reports = [WeakNormReport(float(s.t), float(v), []) for s, v in zip(slab, norms)]
    v = np.array([r.norm for r in reports])
    inc = 0.0
    if len(v) > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(v[:-1] > 0, np.diff(v) / v[:-1], 0.0)
        inc = float(max(np.max(rel), 0.0))
    return MonotonicityResult(reports, inc, tol)


# --------------------------------------------------------------------------
# validation against explicit test functions

def ball_potential(r, sigma):
    """Potential of the uniform unit-mass ball of radius ``sigma`` (closed form)."""
    r = np.asarray(r, dtype=float)
    inside = (3.0 * sigma**2 - r**2) / (8.0 * math.pi * sigma**3)
    with np.errstate(divide="ignore"):
        outside = 1.0 / (4.0 * math.pi * np.maximum(r, 1e-300))
    return np.where(r < sigma, inside, outside)


def ball_family_sup(f, grid, sigmas=None, centers=None, search_radius=2):
    """Largest pairing ``<f, psi>`` over ``psi = Gamma * g_sigma(. - c)``.

    ``g_sigma`` is the uniform unit-mass ball, so ``||Delta psi||_1 = 1``.  The
    pairing is computed by direct summation against the closed-form ``psi``,
    independently of the FFT convolution.  Centers default to the nodes within
    ``search_radius`` cells of the potential maximiser.
    """
    f = np.asarray(f, dtype=float)
    if sigmas is None:
        sigmas = (grid.h, 2.0 * grid.h)
    if centers is None:
        pot = newtonian_potential(f, grid)
        c0 = np.unravel_index(int(np.argmax(pot.values)), grid.shape)
        offs = range(-search_radius, search_radius + 1)
        centers = [tuple(-0.5 * grid.L + (c0[d] + o[d]) * grid.h for d in range(3))
                   for o in np.array(np.meshgrid(offs, offs, offs)).reshape(3, -1).T]
    xs = grid.coords()
    best, arg = -np.inf, None
    for c in centers:
        r = np.sqrt(sum((x - ci) ** 2 for x, ci in zip(xs, c)))
        for s in sigmas:
            val = float(integrate(grid, f * ball_potential(r, s)))
            if val > best:
                best, arg = val, (tuple(c), s)
    return best, arg


# --------------------------------------------------------------------------
# consequences of the weak bound

def quintic_step(u):
    """``S(u) = 6u^5 - 15u^4 + 10u^3`` clamped to [0, 1]; C^2 at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 + u * (-15.0 + 6.0 * u))


def quintic_step_d1(u):
    u = np.asarray(u, dtype=float)
    return np.where((u > 0) & (u < 1), 30.0 * u**2 * (1.0 - u) ** 2, 0.0)


def quintic_step_d2(u):
    u = np.asarray(u, dtype=float)
    return np.where((u > 0) & (u < 1), 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)


def radial_bump(r, inner, outer):
    """1 for ``r <= inner``, 0 for ``r >= outer``, quintic ramp in between."""
    return 1.0 - quintic_step((np.asarray(r, dtype=float) - inner) / (outer - inner))


def bump_laplacian_l1(N, inner, outer):
    """``||Delta phi||_1`` of the radial quintic bump, by adaptive radial quadrature."""
    w = outer - inner

    def integrand(r):
        u = (r - inner) / w
        lap = -quintic_step_d2(u) / w**2 - (N - 1) / r * quintic_step_d1(u) / w
        return abs(float(lap)) * sphere_area(N, r)

    val, _ = sint.quad(integrand, inner, outer, limit=200, epsabs=0, epsrel=1e-12,
                       points=[inner + 0.5 * w])
    return val


def l1_control_check(f, grid, center=None, radius=1.0, norm=None):
    """``||f||_{L1(K)} <= C(K) ||f||_w`` with ``K = B(center, radius)`` and a concrete bump."""
    center = np.zeros(grid.N) if center is None else np.asarray(center, dtype=float)
    if 2.0 * radius > 0.5 * grid.L:
        raise PreconditionError(f"2K (radius {2 * radius}) exceeds the box half-width {0.5 * grid.L}")
    f = np.asarray(f, dtype=float)
    lhs = float(integrate(grid, f, weight=ball_mask(grid, center, radius)))
    CK = bump_laplacian_l1(grid.N, radius, 2.0 * radius)
    wn = weak_norm(f, grid) if norm is None else norm
    rhs = CK * wn
    return PropertyReport("l1_control", lhs <= rhs * (1 + 1e-12) + 1e-300, lhs, rhs,
                          {"C_K": CK, "weak_norm": wn, "radius": radius, "center": center.tolist()})


def strong_bound_constant(N=3):
    """Analytic constant with ``||Gamma * f||_inf <= C (||f||_1 + ||f||_inf)``.

    Splitting the kernel at ``|x| = 1`` gives ``C = max(int_{B1} Gamma, Gamma(1)) = 1/2``.
    """
    if N != 3:
        raise ValueError("only N = 3 is supported")
    return max(0.5, 1.0 / (4.0 * math.pi))


def strong_bound_ratio(f, grid):
    f = np.asarray(f, dtype=float)
    denom = float(integrate(grid, np.abs(f))) + float(np.max(np.abs(f)))
    return weak_norm(f, grid) / denom if denom > 0 else 0.0


def lq_exponent(p, N):
    """``q`` with ``1/p = 1 - 2/(qN)``."""
    if not 1.0 < p < (N / (N - 2.0) if N > 2 else math.inf):
        raise ValueError(f"p must lie in (1, N/(N-2)), got {p}")
    return 2.0 * p / (N * (p - 1.0))


def interpolation_bound(slab, p, center=None, radius=3.0, t0=None, t1=None, norms=None):
    """Implied constants in ``||a_i||_{Lq Lp(B)} <= C ||grad sqrt a_i||_2^{2(p-1)/p} ||rho||_{Linf w}^{1/p}``.

    Time integrals use the trapezoid rule over the snapshots in ``[t0, t1]``.
    Returns one implied constant per species (0 where both sides vanish).
    """
    g = slab.grid
    q = lq_exponent(p, g.N)
    snaps = slab.window(slab.times[0] if t0 is None else t0, slab.t_end if t1 is None else t1)
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots in the window")
    t = np.array([s.t for s in snaps])
    mask = ball_mask(g, np.zeros(g.N) if center is None else center, radius)
    lp = np.array([integrate(g, np.abs(s.data) ** p, weight=mask) ** (1.0 / p) for s in snaps])  # (T, P)
    gs = np.array([integrate(g, grad_sqrt_density(g, s.data)) for s in snaps])
    if norms is None:
        norms = [weak_norm(s.total(), g) for s in snaps]
    W = float(np.max(norms))
    lhs = sint.trapezoid(lp**q, t, axis=0) ** (1.0 / q)
    G = np.sqrt(sint.trapezoid(gs, t, axis=0))
    rhs = G ** (2.0 * (p - 1.0) / p) * W ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = np.where(rhs > 0, lhs / rhs, 0.0)
    return PropertyReport("interpolation", bool(np.all(np.isfinite(C))), float(np.max(lhs)), float(np.max(rhs)),
                          {"p": p, "q": q, "constants": C.tolist(), "lhs": lhs.tolist(),
                           "grad_norm": G.tolist(), "weak_norm": W})
