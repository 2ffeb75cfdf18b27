"""Parabolic rescaling ``a_eps(s, y) = eps^kappa a(eps^2 s + T, eps y + x0)`` with ``kappa = 2/(nu - 1)``.

Fields are rescaled by relabelling, never by interpolation: the rescaled
grid has spacing ``h / eps`` and the same number of nodes, centred on the
anchor.  With dyadic ``eps`` every factor is a power of two (for integer
``kappa``), so norms transform exactly in floating point.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .grid import GridSpec, SpaceTimeSlab, SpeciesField, grad_sqrt_density, integrate
from .model import ReactionModel
from .reports import PropertyReport


class ScalingError(ValueError):
    pass


def kappa(nu):
    if not nu > 1.0:
        raise ScalingError(f"rescaling needs nu > 1, got {nu}")
    return 2.0 / (nu - 1.0)


def _is_dyadic(eps):
    if not eps > 0:
        return False
    m, e = math.frexp(eps)
    return m == 0.5


@dataclass(frozen=True)
class ScalingParams:
    eps: float
    T: float
    x0: tuple
    nu: float

    def __post_init__(self):
        if not _is_dyadic(self.eps):
            raise ScalingError(f"eps must be a power of two for exact resampling, got {self.eps}")
        kappa(self.nu)

    @property
    def kappa(self):
        return kappa(self.nu)

    @property
    def amplitude(self):
        return self.eps**self.kappa

    def fits_cylinder(self):
        """Whether the rescaled window ``(-3, 0)`` lies inside ``(0, T)``."""
        return self.eps <= math.sqrt(self.T / 6.0)

    def s_of(self, t):
        return (t - self.T) / self.eps**2

    def t_of(self, s):
        return self.eps**2 * s + self.T


def rescaled_grid(grid, eps):
    return GridSpec(grid.N, grid.n, grid.L / eps)


def _shift(grid, x0):
    idx = grid.index_of(x0)
    return tuple(grid.n // 2 - i for i in idx)


def rescale_snapshot(field, params):
    g = field.grid
    x0 = np.zeros(g.N) if params.x0 is None else np.asarray(params.x0, dtype=float)
    shift = _shift(g, x0)
    data = np.roll(field.data, shift, axis=tuple(range(1, g.N + 1))) * params.amplitude
    return SpeciesField(rescaled_grid(g, params.eps), data, params.s_of(field.t))


def unrescale_snapshot(field, params):
    """Inverse of :func:`rescale_snapshot`."""
    g = GridSpec(field.grid.N, field.grid.n, field.grid.L * params.eps)
    x0 = np.zeros(g.N) if params.x0 is None else np.asarray(params.x0, dtype=float)
    shift = _shift(g, x0)
    data = np.roll(field.data, tuple(-s for s in shift), axis=tuple(range(1, g.N + 1))) / params.amplitude
    return SpeciesField(g, data, params.t_of(field.t))


def rescale_field(slab, params, window=None):
    """Rescale every snapshot (optionally only those with rescaled time in ``window = (s0, s1)``)."""
    snaps = [rescale_snapshot(s, params) for s in slab]
    if window is not None:
        s0, s1 = window
        times = [s.t for s in snaps]
        if not times or times[0] > s0 + 1e-9 or times[-1] < s1 - 1e-9:
            raise ScalingError(f"slab covers s in [{times[0]:.4g}, {times[-1]:.4g}], window is {window}")
        snaps = [s for s in snaps if s0 - 1e-9 <= s.t <= s1 + 1e-9]
    return SpaceTimeSlab(snaps, nu=slab.nu)


class ScaledReaction(ReactionModel):
    """``Q_eps(a) = eps^(2 nu/(nu-1)) Q(eps^-kappa a)`` with the growth constant of ``Q``."""

    def __init__(self, base, eps):
        self.base = base
        self.eps = float(eps)
        self.k = kappa(base.nu)
        self.name = f"{base.name}@eps={self.eps:g}"
        a_cert = None if base.a_cert is None else base.a_cert * self.eps**self.k
        super().__init__(base.P, base.nu, base.Lambda, a_cert=a_cert)

    def _pre(self, a):
        return np.asarray(a, dtype=float) * self.eps ** (-self.k)

    def rate(self, a):
        return self.eps ** (2.0 * self.nu / (self.nu - 1.0)) * self.base.rate(self._pre(a))

    def jacobian(self, a):
        return self.eps**2 * self.base.jacobian(self._pre(a))

    def stiffness(self, a):
        return self.eps**2 * self.base.stiffness(self._pre(a))

    def active_mask(self, a):
        return self.base.active_mask(self._pre(a))

    def describe(self):
        d = super().describe()
        d.update(base=self.base.describe(), eps=self.eps)
        return d


def rescale_reaction(model, eps):
    if not eps > 0:
        raise ScalingError("eps must be positive")
    return ScaledReaction(model, eps)


# --------------------------------------------------------------------------
# norm identities

def sup_weak_norm(slab):
    from .weaknorm import weak_norm

    return max(weak_norm(s.total(), s.grid) for s in slab)


def gradient_energy(slab):
    """``sum_i int int |grad sqrt(a_i)|^2`` over the slab (trapezoid in time)."""
    t = slab.times
    G = np.array([float(np.sum(integrate(s.grid, grad_sqrt_density(s.grid, s.data)))) for s in slab])
    return float(np.sum(0.5 * (G[1:] + G[:-1]) * np.diff(t)))


def scaling_identity_check(slab, params, tol=1e-10):
    """Weak-norm ratio ``eps^(kappa-2)`` and gradient ratio ``eps^(kappa-N)`` on matching windows."""
    N = slab.grid.N
    scaled = rescale_field(slab, params)
    w0, w1 = sup_weak_norm(slab), sup_weak_norm(scaled)
    g0, g1 = gradient_energy(slab), gradient_energy(scaled)
    k = params.kappa
    exp_w, exp_g = params.eps ** (k - 2.0), params.eps ** (k - N)
    rw = w1 / w0 if w0 > 0 else 1.0
    rg = g1 / g0 if g0 > 0 else 1.0
    err_w = abs(rw - exp_w) / exp_w
    err_g = abs(rg - exp_g) / exp_g
    return PropertyReport("scaling_identities", err_w <= tol and err_g <= tol, max(err_w, err_g), tol,
                          {"weak_ratio": rw, "weak_expected": exp_w, "grad_ratio": rg, "grad_expected": exp_g,
                           "weak_rel_error": err_w, "grad_rel_error": err_g, "eps": params.eps})


# --------------------------------------------------------------------------
# exponent bookkeeping

def alpha(p, nu, N):
    """``((p - 1)(kappa - 2) + kappa - N) / p``."""
    k = kappa(nu)
    return ((p - 1.0) * (k - 2.0) + k - N) / p


def q_bar(p, N):
    return (2.0 / N) * p / (p - 1.0)


@dataclass
class ScalingReport:
    exponent_weak: float
    exponent_grad: float
    alpha: float
    p_bar: float
    q_bar: float
    eps0: float
    bound: float
    branch: str

    def to_dict(self):
        return asdict(self)


def epsilon0_pipeline(M0, T0, delta_star, p_bar, nu, N, C_M0T0, P=4):
    """Smallest admissible scale and the resulting uniform bound ``P eps0^-kappa``.

    ``eps0 = min(sqrt(T0/6), (delta_star / C_M0T0)^(1/alpha(p_bar)))``.
    """
    upper = N / (N - 2.0) if N > 2 else math.inf
    if not 1.0 < p_bar < upper:
        raise ScalingError(f"p_bar must lie in (1, {upper}), got {p_bar}")
    for name, v in (("M0", M0), ("T0", T0), ("delta_star", delta_star), ("C_M0T0", C_M0T0)):
        if not v > 0:
            raise ScalingError(f"{name} must be positive")
    k = kappa(nu)
    a = alpha(p_bar, nu, N)
    if not a > 0:
        raise ScalingError(f"alpha(p_bar) = {a:.4g} is not positive for nu={nu}, N={N}")
    time_branch = math.sqrt(T0 / 6.0)
    small_branch = (delta_star / C_M0T0) ** (1.0 / a)
    eps0 = min(time_branch, small_branch)
    return ScalingReport(k - 2.0, k - N, a, p_bar, q_bar(p_bar, N), eps0, P * eps0 ** (-k),
                         "time" if time_branch <= small_branch else "smallness")
