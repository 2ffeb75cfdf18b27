"""Level-set truncation energies on shrinking space-time cylinders.

Levels ``k_n = 1 - 2^-n`` and radii/durations ``t_n = 1 + 2^-n`` define the
balls ``B_n = B(x0, t_n)`` and cylinders ``Q_n = (t0 - t_n, t0) x B_n``.  The
energy

    U_n = sup_{t in [t0 - t_n, t0]} sum_i int_{B_n} Phi(a_i - k_n)
          + sum_i int int_{Q_n} |grad Psi(a_i - k_n)|^2

is evaluated from stored snapshots: the sup runs over snapshots inside the
window and the time integral uses the trapezoid rule, with the partial
interval at the left end obtained by linear interpolation of the spatial
integrand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ball_mask, gradient, integrate
from .model import sample_states
from .reports import PropertyReport
from .weaknorm import quintic_step, quintic_step_d1, quintic_step_d2

TIME_TOL = 1e-9


class CoverageError(ValueError):
    """The slab or the box does not contain the requested cylinder."""


# --------------------------------------------------------------------------
# truncation functions

def phi_level(z):
    """``(1 + z) ln(1 + z) - z`` for ``z >= 0``, else 0."""
    z = np.asarray(z, dtype=float)
    zp = np.maximum(z, 0.0)
    out = np.where(z > 0, (1.0 + zp) * np.log1p(zp) - zp, 0.0)
    return out if out.ndim else float(out)


def psi_level(z):
    """``sqrt(1 + z) - 1`` for ``z > 0``, else 0."""
    z = np.asarray(z, dtype=float)
    zp = np.maximum(z, 0.0)
    out = np.where(z > 0, np.sqrt(1.0 + zp) - 1.0, 0.0)
    return out if out.ndim else float(out)


def psi_grad_sq(grid, a, k):
    """``|grad Psi(a - k)|^2 = 1_{a>k} |grad a|^2 / (4 (1 + (a - k)_+))`` per species."""
    a = np.asarray(a, dtype=float)
    above = a > k
    g2 = sum(g * g for g in gradient(grid, a))
    return np.where(above, g2 / (4.0 * (1.0 + np.maximum(a - k, 0.0))), 0.0)


def sqrt_shift_grad_sq(grid, a, R):
    """``|grad sqrt(1 + [a - R]_+)|^2`` (identical to :func:`psi_grad_sq` at level ``R``)."""
    return psi_grad_sq(grid, a, R)


# --------------------------------------------------------------------------
# ladder

@dataclass
class TruncationLadder:
    n_max: int = 6
    t0: float = 0.0
    x0: tuple = None

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("ladder depth must be nonnegative")

    @staticmethod
    def k(n):
        return 1.0 - 2.0 ** (-n)

    @staticmethod
    def t(n):
        return 1.0 + 2.0 ** (-n)

    def center(self, N):
        return np.zeros(N) if self.x0 is None else np.asarray(self.x0, dtype=float)

    def ball(self, grid, n):
        return ball_mask(grid, self.center(grid.N), self.t(n))

    def cutoff(self, grid, n):
        """C^2 radial ramp: 1 on ``B_n``, 0 outside ``B_{n-1}``."""
        if n < 1:
            raise ValueError("cutoffs start at n = 1")
        r = grid.radius(self.center(grid.N))
        return 1.0 - quintic_step((r - self.t(n)) / (self.t(n - 1) - self.t(n)))

    def cutoff_hessian_bound(self, n, samples=4001):
        """``sup |d^2 zeta_n| * 4^-n`` from the radial profile (max of ``|zeta''|`` and ``|zeta'|/r``)."""
        lo, hi = self.t(n), self.t(n - 1)
        w = hi - lo
        r = np.linspace(lo, hi, samples)
        u = (r - lo) / w
        d2 = np.abs(quintic_step_d2(u)) / w**2
        d1r = np.abs(quintic_step_d1(u)) / w / r
        return float(np.max(np.maximum(d2, d1r))) * 4.0 ** (-n)

    def levels(self):
        return [(n, self.k(n), self.t(n)) for n in range(self.n_max + 1)]


@dataclass
class LevelSetEnergy:
    U: np.ndarray
    ladder: TruncationLadder = None
    sup_part: np.ndarray = None
    grad_part: np.ndarray = None
    N: int = 3

    def rows(self):
        c = implied_constants(self.U, self.N)
        return [{"n": n, "k_n": TruncationLadder.k(n), "t_n": TruncationLadder.t(n),
                 "U_n": float(self.U[n]), "c_n": None if n == 0 or not math.isfinite(c[n]) else float(c[n])}
                for n in range(len(self.U))]


def _window(slab, t0, duration):
    """Snapshots covering ``[t0 - duration, t0]`` plus the interpolation weight for the left end."""
    times = slab.times
    t_left = t0 - duration
    if not np.any(np.abs(times - t0) <= TIME_TOL * max(1.0, abs(t0))):
        raise CoverageError(f"no snapshot at the anchor time {t0}")
    if times[0] > t_left + TIME_TOL * max(1.0, abs(t_left)):
        raise CoverageError(f"slab starts at {times[0]}, cylinder needs {t_left}")
    inside = [i for i, t in enumerate(times) if t_left - TIME_TOL <= t <= t0 + TIME_TOL]
    first = inside[0]
    partial = None
    if times[first] > t_left + TIME_TOL:
        j = first - 1
        w = (t_left - times[j]) / (times[first] - times[j])
        partial = (j, w)
    return inside, partial, t_left


def _check_ball(grid, center, radius):
    if radius > 0.5 * grid.L:
        raise CoverageError(f"ball radius {radius} exceeds half the box {0.5 * grid.L}")


def cylinder_energy(slab, t0, x0, radius, duration, level):
    """Return ``(sup part, gradient part)`` of the truncated energy at ``level``."""
    g = slab.grid
    center = np.zeros(g.N) if x0 is None else np.asarray(x0, dtype=float)
    _check_ball(g, center, radius)
    inside, partial, t_left = _window(slab, t0, duration)
    mask = ball_mask(g, center, radius)

    def grad_energy(s):
        return float(np.sum(integrate(g, psi_grad_sq(g, s.data, level), weight=mask)))

    sup = max(float(np.sum(integrate(g, phi_level(slab[i].data - level), weight=mask))) for i in inside)
    t = [slab[i].t for i in inside]
    G = [grad_energy(slab[i]) for i in inside]
    if partial is not None:
        j, w = partial
        Gj = grad_energy(slab[j])
        t = [t_left] + t
        G = [(1.0 - w) * Gj + w * G[0]] + G
    integral = 0.0
    for a, b, ga, gb in zip(t[:-1], t[1:], G[:-1], G[1:]):
        integral += 0.5 * (ga + gb) * (b - a)
    return sup, integral


def compute_Un(slab, ladder, n):
    sup, grad = cylinder_energy(slab, ladder.t0, ladder.center(slab.grid.N), ladder.t(n), ladder.t(n),
                                ladder.k(n))
    return sup + grad


def compute_ladder(slab, ladder):
    sups, grads = [], []
    for n in range(ladder.n_max + 1):
        s, g = cylinder_energy(slab, ladder.t0, ladder.center(slab.grid.N), ladder.t(n), ladder.t(n),
                               ladder.k(n))
        sups.append(s)
        grads.append(g)
    sups, grads = np.array(sups), np.array(grads)
    return LevelSetEnergy(sups + grads, ladder, sups, grads, N=slab.grid.N)


# --------------------------------------------------------------------------
# recursion

def implied_constants(U, N):
    """``c_n = U_n / U_{n-1}^((N+2)/N)`` (nan where undefined)."""
    U = np.asarray(U, dtype=float)
    e = (N + 2.0) / N
    c = np.full(len(U), np.nan)
    for n in range(1, len(U)):
        if U[n - 1] > 0:
            c[n] = U[n] / U[n - 1] ** e
    return c


def fit_exponent(U):
    """Least-squares ``log U_n = n log C + beta log U_{n-1}`` over consecutive positive pairs."""
    U = np.asarray(U, dtype=float)
    rows, rhs = [], []
    for n in range(1, len(U)):
        if U[n] > 0 and U[n - 1] > 0:
            rows.append([n, math.log(U[n - 1])])
            rhs.append(math.log(U[n]))
    if len(rows) < 2:
        return float("nan"), float("nan")
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    return float(sol[1]), float(math.exp(sol[0]))


@dataclass
class RecursionReport:
    U: list
    c: list
    c_root: list
    beta: float
    C: float
    target: float
    vacuous: bool
    decays: bool
    extinct_at: int | None = None

    @property
    def passed(self):
        return self.vacuous or self.decays

    def to_dict(self):
        return {k: getattr(self, k) for k in ("U", "c", "c_root", "beta", "C", "target", "vacuous",
                                             "decays", "extinct_at")} | {"passed": self.passed}


def recursion_check(U, N, margin=0.9):
    """Look for super-geometric decay ``U_n <= C^n U_{n-1}^((N+2)/N)`` along a ladder."""
    U = np.asarray(U, dtype=float)
    target = (N + 2.0) / N
    if np.all(U == 0):
        return RecursionReport(U.tolist(), [], [], float("nan"), float("nan"), target, True, True)
    c = implied_constants(U, N)
    root = [float(abs(c[n]) ** (1.0 / n)) if math.isfinite(c[n]) else float("nan") for n in range(len(U))]
    extinct = next((n for n in range(1, len(U)) if U[n] == 0 and U[n - 1] > 0), None)
    beta, C = fit_exponent(U)
    pos = U[U > 0]
    if len(pos) < 3 and extinct is None:
        raise ValueError("need at least three positive ladder entries")
    decays = extinct is not None or (math.isfinite(beta) and beta >= margin * target)
    return RecursionReport(U.tolist(), [None if not math.isfinite(v) else float(v) for v in c],
                           [None if not math.isfinite(v) else v for v in root], beta, C, target,
                           False, bool(decays), extinct)


# --------------------------------------------------------------------------
# local boundedness

def cylinder_lp_norms(slab, p, t0, x0=None, radius=3.0, duration=3.0):
    """Per-species ``||a_i||_{Lp((t0 - duration, t0) x B(x0, radius))}`` (trapezoid in time)."""
    g = slab.grid
    center = np.zeros(g.N) if x0 is None else np.asarray(x0, dtype=float)
    _check_ball(g, center, radius)
    inside, partial, t_left = _window(slab, t0, duration)
    mask = ball_mask(g, center, radius)

    def slice_int(s):
        return integrate(g, np.abs(s.data) ** p, weight=mask)

    t = [slab[i].t for i in inside]
    F = [slice_int(slab[i]) for i in inside]
    if partial is not None:
        j, w = partial
        t = [t_left] + t
        F = [(1.0 - w) * slice_int(slab[j]) + w * F[0]] + F
    total = np.zeros(slab.P)
    for a, b, fa, fb in zip(t[:-1], t[1:], F[:-1], F[1:]):
        total += 0.5 * (fa + fb) * (b - a)
    return total ** (1.0 / p)


class LpAccumulator:
    """Run observer accumulating per-species ``int_B |a_i|^p`` for a cylinder norm."""

    def __init__(self, grid, p, x0=None, radius=3.0, t_from=0.0):
        self.grid, self.p, self.t_from = grid, p, t_from
        center = np.zeros(grid.N) if x0 is None else np.asarray(x0, dtype=float)
        _check_ball(grid, center, radius)
        self.mask = ball_mask(grid, center, radius)
        self.times, self.values = [], []

    def __call__(self, field):
        if field.t >= self.t_from - TIME_TOL:
            self.times.append(field.t)
            self.values.append(integrate(self.grid, np.abs(field.data) ** self.p, weight=self.mask))

    def norms(self):
        t = np.array(self.times)
        F = np.array(self.values)
        total = np.sum(0.5 * (F[1:] + F[:-1]) * np.diff(t)[:, None], axis=0)
        return total ** (1.0 / self.p)


@dataclass
class LocalBoundReport:
    norm: float
    delta: float
    center_values: list
    triggered: bool
    passed: bool
    p: float

    @property
    def status(self):
        if not self.triggered:
            return "not triggered"
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {"norm": self.norm, "delta": self.delta, "center_values": self.center_values,
                "triggered": self.triggered, "passed": self.passed, "status": self.status, "p": self.p}


def local_bound_from_values(norms, center_values, p, delta):
    norm = float(np.sum(norms))
    cv = [float(v) for v in center_values]
    triggered = norm <= delta
    ok = all(0.0 <= v <= 1.0 for v in cv) if triggered else True
    return LocalBoundReport(norm, float(delta), cv, triggered, ok, p)


def local_bound_experiment(slab, p, delta, t0=None, x0=None, radius=3.0, duration=3.0):
    """If the cylinder ``Lp`` norm is at most ``delta``, require ``0 <= a_i(t0, x0) <= 1``."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    g = slab.grid
    t0 = slab.t_end if t0 is None else t0
    center = np.zeros(g.N) if x0 is None else np.asarray(x0, dtype=float)
    norms = cylinder_lp_norms(slab, p, t0, center, radius, duration)
    idx = g.index_of(center)
    snap = slab.at(t0)
    cv = [snap.data[(i,) + idx] for i in range(snap.P)]
    return local_bound_from_values(norms, cv, p, delta)


@dataclass
class DeltaStarResult:
    delta_star: float
    amplitude: float
    p: float
    history: list = field(default_factory=list)
    grid_n: int = 0

    def to_dict(self):
        return {"delta_star": self.delta_star, "amplitude": self.amplitude, "p": self.p,
                "grid_n": self.grid_n, "history": self.history}


def bump_probe(cfg, amplitude, p, t0=3.0, radius=3.0, observe_dt=0.1):
    """Run ``cfg`` from a centred bump of the given peak amplitude up to ``t0``.

    Returns the summed cylinder ``Lp`` norm over ``(0, t0) x B(0, radius)`` and
    the species values at ``(t0, 0)``.
    """
    from .solver import run

    params = {"n_bumps": 1, "amplitude": float(amplitude), "width": 1.0, "spread": 0.0}
    c = cfg.with_changes(**{"initial": {"kind": "gaussian_bumps", "params": params},
                            "t_end": t0, "dt_store": t0})
    every = max(1, int(round(observe_dt / c.dt)))
    acc = LpAccumulator(c.grid, p, radius=radius, t_from=t0 - 3.0)
    res = run(c, observer=acc, observe_every=every, weak_norms=False)
    final = res.slab[-1]
    idx = c.grid.center_index
    return float(np.sum(acc.norms())), [float(final.data[(i,) + idx]) for i in range(final.P)]


def calibrate_delta_star(cfg, p=4.0 / 3.0, lo=1.0, hi=None, iterations=10, t0=3.0, probe=bump_probe):
    """Bisect the initial amplitude between a passing and a failing run.

    ``delta_star`` is the cylinder norm of the largest passing amplitude found.
    """
    history = []

    def evaluate(A):
        norm, cv = probe(cfg, A, p, t0)
        ok = all(v <= 1.0 for v in cv)
        history.append({"amplitude": A, "norm": norm, "center_max": max(cv), "pass": ok})
        return norm, ok

    n_lo, ok = evaluate(lo)
    while not ok:
        lo *= 0.5
        n_lo, ok = evaluate(lo)
    hi = 2.0 * lo if hi is None else hi
    n_hi, ok_hi = evaluate(hi)
    while ok_hi:
        lo, n_lo = hi, n_hi
        hi *= 2.0
        n_hi, ok_hi = evaluate(hi)
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        n_mid, ok_mid = evaluate(mid)
        if ok_mid:
            lo, n_lo = mid, n_mid
        else:
            hi = mid
    return DeltaStarResult(n_lo, lo, p, history, cfg.grid.n)


# --------------------------------------------------------------------------
# pointwise and sampled inequalities

def rineq_check(model, n_samples=100_000, seed=0, tol=1e-6):
    """``sum_i |Q_i(a) - Q_i(1 + [a - R]_+)| <= 2 P Lambda |1 + [a - R]_+|^(nu - 1)`` on samples."""
    rng = np.random.default_rng(seed)
    a = sample_states(model.P, n_samples, seed)[0].copy()
    R = rng.uniform(0.0, 1.0, size=a.shape[1])
    R[:4] = [0.0, 1.0, 1.0, 0.5]
    a[:, 1] = 1.0
    v = 1.0 + np.maximum(a - R, 0.0)
    lhs = np.sum(np.abs(model.rate(a) - model.rate(v)), axis=0)
    rhs = 2.0 * model.P * model.Lambda * np.linalg.norm(v, axis=0) ** (model.nu - 1.0)
    viol = int(np.sum(lhs > rhs * (1.0 + tol)))
    ratio = lhs / rhs
    return PropertyReport("rineq", viol == 0, float(np.max(lhs)), float(np.max(rhs)),
                          {"violations": viol, "max_ratio": float(np.max(ratio)), "n_samples": int(a.shape[1])})


def lemma_constants(n_samples=10_000, n_levels=10, seed=0):
    """Measured constants for ``Psi <= C sqrt(Phi)`` and the level-indicator bound.

    Returns ``(C_sqrt, C_indicator, C_tilde)`` where ``C_tilde`` is the larger
    of the two; every sampled instance of both inequalities holds with it.
    """
    rng = np.random.default_rng(seed)
    z = np.concatenate([10.0 ** rng.uniform(-8, 4, n_samples - 200), rng.uniform(-3, 0, 100),
                        np.linspace(1e-6, 3.0, 100)])
    pos = z > 0
    c_sqrt = float(np.max(psi_level(z[pos]) / np.sqrt(phi_level(z[pos]))))
    c_ind = 0.0
    for n in range(1, n_levels + 1):
        kn, kp = TruncationLadder.k(n), TruncationLadder.k(n - 1)
        # include points just above the level, where the bound is tightest
        zz = np.concatenate([z, kn + 10.0 ** rng.uniform(-12, 0, 200)])
        on = psi_level(zz - kn) > 0
        if np.any(on):
            c_ind = max(c_ind, float(np.max(1.0 / (2.0**n * psi_level(zz[on] - kp)))))
    return c_sqrt, c_ind, max(c_sqrt, c_ind)


def lemma_checks(C_tilde, n_samples=10_000, n_levels=10, seed=1):
    """Count violations of both pointwise inequalities for a given constant."""
    rng = np.random.default_rng(seed)
    z = np.concatenate([10.0 ** rng.uniform(-8, 4, n_samples // 2), rng.uniform(-5, 5, n_samples // 2)])
    v1 = int(np.sum(psi_level(z) > C_tilde * np.sqrt(phi_level(z)) * (1 + 1e-12)))
    v2 = 0
    for n in range(1, n_levels + 1):
        ind = (psi_level(z - TruncationLadder.k(n)) > 0).astype(float)
        v2 += int(np.sum(ind > C_tilde * 2.0**n * psi_level(z - TruncationLadder.k(n - 1)) * (1 + 1e-12)))
    return v1, v2


def local_dissipation_constants(slab, D, t0, x0=None, ns=(1, 2, 3, 4), Rs=(0.0, 0.5, 0.75)):
    """Implied ``C_hat`` for the local entropy dissipation bound at each ``(n, R)``.

    ``C_hat(n, R) = LHS / (4^n RHS_integral)`` with
    LHS = sup_t sum int_{B_n} Phi(a - R) + d_lo sum int int_{Q_n} |grad sqrt(1 + [a - R]_+)|^2 and
    RHS_integral = sum int int_{Q_{n-1}} (1 + [a - R]_+) ln(1 + [a - R]_+).
    """
    g = slab.grid
    d_lo = min(D)
    center = np.zeros(g.N) if x0 is None else np.asarray(x0, dtype=float)
    out = {}
    for n in ns:
        for R in Rs:
            sup, grad = cylinder_energy(slab, t0, center, TruncationLadder.t(n), TruncationLadder.t(n), R)
            lhs = sup + d_lo * grad
            rhs_int = _space_time_integral(
                slab, t0, center, TruncationLadder.t(n - 1), TruncationLadder.t(n - 1),
                lambda a: (1.0 + np.maximum(a - R, 0.0)) * np.log1p(np.maximum(a - R, 0.0)))
            out[(n, R)] = (lhs, rhs_int, lhs / (4.0**n * rhs_int) if rhs_int > 0 else (0.0 if lhs == 0 else math.inf))
    return out


def _space_time_integral(slab, t0, center, radius, duration, density):
    g = slab.grid
    _check_ball(g, center, radius)
    inside, partial, t_left = _window(slab, t0, duration)
    mask = ball_mask(g, center, radius)

    def F(s):
        return float(np.sum(integrate(g, density(s.data), weight=mask)))

    t = [slab[i].t for i in inside]
    vals = [F(slab[i]) for i in inside]
    if partial is not None:
        j, w = partial
        t = [t_left] + t
        vals = [(1.0 - w) * F(slab[j]) + w * vals[0]] + vals
    return float(sum(0.5 * (va + vb) * (b - a) for a, b, va, vb in zip(t[:-1], t[1:], vals[:-1], vals[1:])))


def u0_terms(slab, p, t0, x0=None):
    """``(U_0, S)`` with ``S = sum ||a_i||_p^p + sum ||a_i||_p^(1/2)`` on ``(t0 - 3, t0) x B(x0, 3)``."""
    center = np.zeros(slab.grid.N) if x0 is None else np.asarray(x0, dtype=float)
    ladder = TruncationLadder(0, t0, tuple(center))
    U0 = compute_Un(slab, ladder, 0)
    norms = cylinder_lp_norms(slab, p, t0, center, 3.0, 3.0)
    S = float(np.sum(norms**p) + np.sum(np.sqrt(norms)))
    return U0, S


def u0_bound_check(slabs, p, t0=None, x0=None, spread=None):
    """Single constant ``C`` with ``U_0 <= C S`` across a family of slabs.

    With ``spread`` given, the implied constants must also stay within that
    factor of each other.  Small data make ``U_0 ~ A^2`` while ``S ~ A^(1/2)``,
    so a wide amplitude sweep spreads them like ``A^(3/2)``.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not isinstance(slabs, (list, tuple)):
        slabs = [slabs]
    pairs = [u0_terms(s, p, s.t_end if t0 is None else t0, x0) for s in slabs]
    Cs = [U / S for U, S in pairs if S > 0]
    if not Cs:
        return PropertyReport("u0_bound", all(U == 0 for U, _ in pairs), 0.0, 0.0, {"constants": []})
    C = max(Cs)
    ok = all(U <= C * S * (1 + 1e-12) for U, S in pairs)
    if spread is not None:
        ok = ok and max(Cs) <= spread * min(Cs)
    return PropertyReport("u0_bound", ok, float(max(U for U, _ in pairs)), float(C * max(S for _, S in pairs)),
                          {"C": C, "constants": Cs, "spread": max(Cs) / min(Cs), "pairs": [list(x) for x in pairs], "p": p})
