"""Time integration by Strang splitting and the backward dual (adjoint) solve.

Diffusion is advanced with the exact periodic heat semigroup in Fourier
space; the reaction with the classical RK4 method cell by cell.  Consecutive
half-steps of diffusion are fused between synchronisation points (stores and
observer calls), which changes results only at round-off level.
"""
from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .grid import SpaceTimeSlab, SpeciesField, boundary_mass_fraction, integrate

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 0.5


class StabilityError(RuntimeError):
    """Explicit reaction step would violate ``stiffness * dt <= limit``."""

    reason = "reaction_stability"

    def __init__(self, stiffness, dt, limit=STABILITY_LIMIT, t=None):
        self.stiffness, self.dt, self.limit, self.t = stiffness, dt, limit, t
        super().__init__(f"reaction stiffness {stiffness:.4g} x dt {dt:.3g} = {stiffness * dt:.4g} "
                         f"exceeds {limit} (t={t})")


class NumericalFailure(RuntimeError):
    """Non-finite values appeared; carries the last finite snapshot."""

    reason = "numerical_failure"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class DualSolveError(RuntimeError):
    reason = "dual_nonconvergence"

    def __init__(self, t, residual, iterations):
        self.t, self.residual, self.iterations = t, residual, iterations
        super().__init__(f"dual fixed point did not converge at t={t:.6g}: "
                         f"residual {residual:.3e} after {iterations} iterations")


@dataclass(frozen=True)
class DiffusionSpec:
    D: tuple

    def __post_init__(self):
        object.__setattr__(self, "D", tuple(float(d) for d in self.D))
        if not self.D or min(self.D) < 0:
            raise ValueError("diffusion coefficients must be nonnegative")

    @property
    def P(self):
        return len(self.D)

    @property
    def d_lo(self):
        return min(self.D)

    @property
    def d_hi(self):
        return max(self.D)

    @property
    def d_ref(self):
        return 0.5 * (self.d_lo + self.d_hi)


def as_diffusion(D):
    return D if isinstance(D, DiffusionSpec) else DiffusionSpec(tuple(D))


@dataclass
class ClipLog:
    """Cumulative mass removed from negative values by clipping.

    After clipping, each species is rescaled so that its total over the
    clipped array is restored; the logged deficit is therefore a measure of
    the ringing, not of a mass change.
    """

    P: int
    per_species: np.ndarray = None
    events: int = 0
    conserve: bool = True

    def __post_init__(self):
        if self.per_species is None:
            self.per_species = np.zeros(self.P)

    @property
    def total(self):
        return float(np.sum(self.per_species))

    def clip(self, data, cell_volume):
        """Clip ``data`` (species on axis 0) in place and record the deficit."""
        neg = data < 0.0
        if not np.any(neg):
            return
        flat = data.reshape(data.shape[0], -1)
        before = np.sum(flat, axis=1)
        deficit = -np.sum(np.where(neg, data, 0.0).reshape(data.shape[0], -1), axis=1) * cell_volume
        self.per_species += deficit
        self.events += 1
        np.maximum(data, 0.0, out=data)
        if self.conserve:
            after = np.sum(flat, axis=1)
            for i in np.nonzero((deficit > 0) & (after > 0) & (before > 0))[0]:
                data[i] *= before[i] / after[i]


@dataclass
class StepperConfig:
    dt: float
    reaction_substeps: int = 1
    clip_log: ClipLog | None = None
    stability_limit: float = STABILITY_LIMIT

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.reaction_substeps < 1:
            raise ValueError("reaction_substeps must be >= 1")


# --------------------------------------------------------------------------
# spectral machinery

def _axes(grid, lead):
    return tuple(range(lead, lead + grid.N))


@functools.lru_cache(maxsize=32)
def wavenumber_sq(grid):
    """``|k|^2`` on the real-FFT layout of ``grid``."""
    k = 2.0 * np.pi * sfft.fftfreq(grid.n, d=grid.h)
    kr = 2.0 * np.pi * sfft.rfftfreq(grid.n, d=grid.h)
    k2 = 0.0
    for d in range(grid.N):
        kd = kr if d == grid.N - 1 else k
        s = [1] * grid.N
        s[d] = kd.size
        k2 = k2 + kd.reshape(s) ** 2
    return np.asarray(k2)


@functools.lru_cache(maxsize=64)
def heat_multiplier(grid, D, dt):
    k2 = wavenumber_sq(grid)
    return np.stack([np.exp(-d * k2 * dt) for d in D])


def laplacian_spectral(grid, f):
    f = np.asarray(f, dtype=float)
    ax = _axes(grid, f.ndim - grid.N)
    return sfft.irfftn(-wavenumber_sq(grid) * sfft.rfftn(f, axes=ax), s=grid.shape, axes=ax)


def heat_semigroup(grid, f, c, t):
    """``exp(c t Delta) f`` for a scalar field (``t`` may be negative for well-resolved data)."""
    return sfft.irfftn(np.exp(-c * t * wavenumber_sq(grid)) * sfft.rfftn(f), s=grid.shape)


def _diffuse_data(grid, data, D, dt):
    ax = _axes(grid, 1)
    hat = sfft.rfftn(data, axes=ax)
    hat *= heat_multiplier(grid, D, float(dt))
    return sfft.irfftn(hat, s=grid.shape, axes=ax)


def diffusion_step(field, D, dt, clip_log=None):
    """Exact heat-semigroup step for every species; negatives from ringing are clipped."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return field.copy()
    D = as_diffusion(D)
    if D.P != field.P:
        raise ValueError(f"{D.P} diffusion coefficients for {field.P} species")
    data = _diffuse_data(field.grid, field.data, D.D, dt)
    if clip_log is not None:
        clip_log.clip(data, field.grid.cell_volume)
    return SpeciesField(field.grid, data, field.t + dt)


# --------------------------------------------------------------------------
# reaction

def check_stability(model, states, dt, limit=STABILITY_LIMIT, t=None):
    s = model.stiffness(states) if np.size(states) else 0.0
    if not math.isfinite(s):
        raise NumericalFailure(f"non-finite reaction stiffness at t={t}")
    if s * dt > limit:
        raise StabilityError(s, dt, limit, t)
    return s


def _rk4(model, y, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        k1 = model.rate(y)
        k2 = model.rate(y + 0.5 * h * k1)
        k3 = model.rate(y + 0.5 * h * k2)
        k4 = model.rate(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def reaction_step(model, field, dt, clip_log=None, substeps=1, check=True, limit=STABILITY_LIMIT):
    """RK4 advance of ``da/dt = Q(a)`` in every cell.

    Only cells in ``model.active_mask`` are integrated; elsewhere the rate is
    exactly zero and the state is unchanged.
    """
    data = field.data.copy()
    mask = model.active_mask(data)
    y = data if mask is None else data[:, mask]
    if y.size:
        if check:
            check_stability(model, y, dt / substeps, limit, t=field.t)
        y = _rk4(model, y, dt, substeps)
        if clip_log is not None:
            clip_log.clip(y, field.grid.cell_volume)
        if mask is None:
            data = y
        else:
            data[:, mask] = y
    return SpeciesField(field.grid, data, field.t + dt)


def step(model, D, field, dt, clip_log=None, substeps=1):
    """One Strang step: half diffusion, full reaction, half diffusion."""
    t0 = field.t
    f = diffusion_step(field, D, 0.5 * dt, clip_log)
    f = reaction_step(model, f, dt, clip_log, substeps)
    f = diffusion_step(f, D, 0.5 * dt, clip_log)
    f.t = t0 + dt
    return f


class StrangIntegrator:
    """Strang stepping with fused diffusion half-steps between sync points."""

    def __init__(self, model, D, grid, config):
        self.model = model
        self.D = as_diffusion(D)
        self.grid = grid
        self.cfg = config
        self.clip_log = config.clip_log if config.clip_log is not None else ClipLog(model.P)
        self.pending = False

    def _diffuse(self, data, dt):
        out = _diffuse_data(self.grid, data, self.D.D, dt)
        self.clip_log.clip(out, self.grid.cell_volume)
        return out

    def advance(self, field, sync):
        """Advance one step; when ``sync`` is false the trailing half-diffusion is deferred."""
        dt = self.cfg.dt
        data = self._diffuse(field.data, dt if self.pending else 0.5 * dt)
        mid = SpeciesField(self.grid, data, field.t)
        mid = reaction_step(self.model, mid, dt, self.clip_log, self.cfg.reaction_substeps,
                            check=True, limit=self.cfg.stability_limit)
        if sync:
            data = self._diffuse(mid.data, 0.5 * dt)
            self.pending = False
        else:
            data = mid.data
            self.pending = True
        return SpeciesField(self.grid, data, field.t + dt)


# --------------------------------------------------------------------------
# full runs

@dataclass
class RunResult:
    slab: SpaceTimeSlab
    records: list
    clip_log: ClipLog
    boundary_mass_max: float
    wall_time: float
    n_steps: int
    mass0: float
    stats: dict = field(default_factory=dict)

    @property
    def mass_drift(self):
        m = np.array([r.mass for r in self.records])
        return float(np.max(np.abs(m - self.mass0)) / self.mass0) if self.mass0 > 0 else 0.0

    @property
    def clipped_fraction(self):
        return self.clip_log.total / self.mass0 if self.mass0 > 0 else 0.0


def preflight(model, field, dt, substeps=1, limit=STABILITY_LIMIT):
    """Stability check on the initial state (raises :class:`StabilityError`)."""
    mask = model.active_mask(field.data)
    y = field.data if mask is None else field.data[:, mask]
    return check_stability(model, y, dt / substeps, limit, t=field.t)


def run(cfg, observer=None, observe_every=None, weak_norms=None, initial=None):
    """Integrate a scenario from its initial data to ``t_end``.

    Parameters
    ----------
    cfg : ScenarioConfig
    observer : callable, optional
        Called as ``observer(field)`` at ``t = 0`` and every ``observe_every`` steps.
    weak_norms : bool, optional
        Fill ``weak_norm`` in the records (default: only for N = 3).
    initial : SpeciesField, optional
        Overrides the configured initial data.
    """
    from .config import make_initial
    from .entropy import record
    from . import weaknorm

    t_start = time.perf_counter()
    grid, model = cfg.grid, cfg.model
    D = DiffusionSpec(cfg.D)
    field = initial.copy() if initial is not None else make_initial(cfg.initial, grid, model.P, cfg.seed)
    field.t = 0.0
    if weak_norms is None:
        weak_norms = grid.N == 3
    clip = ClipLog(model.P)
    stepper = StepperConfig(cfg.dt, cfg.reaction_substeps, clip)
    preflight(model, field, cfg.dt, cfg.reaction_substeps)

    def make_record(f):
        wn = weaknorm.weak_norm(f.total(), grid) if weak_norms else None
        return record(f, model, weak_norm=wn, clipped_mass=clip.total)

    snapshots = [field.copy()]
    records = [make_record(field)]
    mass0 = records[0].mass
    bmax = boundary_mass_fraction(grid, field.data)
    if observer is not None:
        observer(field)
    n_steps, stride = cfg.n_steps, cfg.store_stride
    integ = StrangIntegrator(model, D, grid, stepper)
    last_good = field.copy()
    for k in range(1, n_steps + 1):
        store = k % stride == 0
        observe = observer is not None and observe_every and k % observe_every == 0
        sync = store or observe or k == n_steps
        try:
            field = integ.advance(field, sync)
        except NumericalFailure as exc:
            if exc.last_good is None:
                exc.last_good = last_good
            raise
        field.t = k * cfg.dt
        if not sync:
            continue
        if not np.all(np.isfinite(field.data)):
            raise NumericalFailure(f"non-finite values at t={field.t:.6g}", last_good)
        last_good = field
        bmax = max(bmax, boundary_mass_fraction(grid, field.data))
        if observe:
            observer(field)
        if store:
            snapshots.append(field.copy())
            records.append(make_record(field))
    wall = time.perf_counter() - t_start
    logger.info("run finished: %d steps in %.1f s, clipped mass %.3e", n_steps, wall, clip.total)
    return RunResult(SpaceTimeSlab(snapshots, nu=model.nu), records, clip, bmax, wall, n_steps, mass0,
                     stats={"clip_events": clip.events})


# --------------------------------------------------------------------------
# dual problem

def effective_diffusivity(field, D, mu):
    """Regularised mean diffusivity ``(sum D_i a_i + mu d_ref) / (rho + mu)``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    D = as_diffusion(D)
    a = field.data if isinstance(field, SpeciesField) else np.asarray(field, dtype=float)
    w = np.tensordot(np.asarray(D.D), a, axes=(0, 0))
    rho = np.sum(a, axis=0)
    return (w + mu * D.d_ref) / (rho + mu)


def default_mu(field):
    return 1e-6 * float(np.mean(field.total()))


@dataclass
class DualState:
    phi: np.ndarray
    mu: float
    d_ref: float
    t: float = 0.0


@dataclass
class DiffusivitySeries:
    """Diffusivity fields at increasing times, linearly interpolated in between."""

    grid: object
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)

    def append(self, t, d):
        if self.times and t <= self.times[-1]:
            raise ValueError("times must increase")
        self.times.append(float(t))
        self.fields.append(np.asarray(d, dtype=float))

    def at(self, t):
        ts = self.times
        if t <= ts[0]:
            return self.fields[0]
        if t >= ts[-1]:
            return self.fields[-1]
        j = int(np.searchsorted(ts, t))
        t0, t1 = ts[j - 1], ts[j]
        if t == t1:
            return self.fields[j]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.fields[j - 1] + w * self.fields[j]


class DualCollector:
    """Run observer recording ``d_mu`` and ``rho`` for a later pairing audit."""

    def __init__(self, D, mu=None):
        self.D = as_diffusion(D)
        self.mu = mu
        self.series = None
        self.rho = []

    def __call__(self, field):
        if self.mu is None:
            self.mu = default_mu(field)
        if self.series is None:
            self.series = DiffusivitySeries(field.grid)
        self.series.append(field.t, effective_diffusivity(field, self.D, self.mu))
        self.rho.append(field.total().copy())


@dataclass
class DualSolution:
    times: np.ndarray
    phis: list
    lap_l1: np.ndarray
    sup: np.ndarray
    iterations: int
    max_residual: float


def dual_backward_solve(d_series, phi_T, dt, theta=0.5, tol=1e-10, max_iter=500, times=None):
    """Solve ``phi_t + d Delta phi = 0`` backward from ``phi(T) = phi_T``.

    Each step is a theta-scheme in reversed time; the implicit system
    ``(I - theta dt d Delta) psi = rhs`` is solved by preconditioned Richardson
    iteration around the constant-coefficient spectral inverse with ``d``
    replaced by the midrange of the current field.  ``phi`` is returned at
    the series times (or ``times``).
    """
    grid = d_series.grid
    k2 = wavenumber_sq(grid)
    T, t_first = d_series.times[-1], d_series.times[0]
    out_times = np.array(d_series.times if times is None else sorted(times), dtype=float)
    phi = np.asarray(phi_T, dtype=float).copy()
    phi_hat = sfft.rfftn(phi)

    def lap_of(hat):
        return sfft.irfftn(-k2 * hat, s=grid.shape)

    def l1(f):
        return float(integrate(grid, np.abs(f)))

    results = {len(out_times) - 1: phi.copy()}
    lap = lap_of(phi_hat)
    lap_l1 = {len(out_times) - 1: l1(lap)}
    total_iter, worst_res = 0, 0.0
    t_hi = T
    for j in range(len(out_times) - 2, -1, -1):
        t_target = out_times[j]
        m = max(1, int(math.ceil((t_hi - t_target) / dt - 1e-9)))
        tau = (t_hi - t_target) / m
        for s in range(m):
            t_lo = t_hi - tau if s < m - 1 else t_target
            d_hi_f = d_series.at(t_hi)
            d_lo_f = d_series.at(t_lo)
            rhs = phi + (1.0 - theta) * tau * d_hi_f * lap
            dbar = 0.5 * (float(d_lo_f.min()) + float(d_lo_f.max()))
            inv = 1.0 / (1.0 + theta * tau * dbar * k2)
            scale = max(float(np.max(np.abs(rhs))), 1e-300)
            hat = sfft.rfftn(rhs) * inv
            for it in range(1, max_iter + 1):
                psi = sfft.irfftn(hat, s=grid.shape)
                lap = lap_of(hat)
                r = rhs - psi + theta * tau * d_lo_f * lap
                res = float(np.max(np.abs(r))) / scale
                if res <= tol:
                    break
                hat = hat + sfft.rfftn(r) * inv
            else:
                raise DualSolveError(t_lo, res, max_iter)
            total_iter += it
            worst_res = max(worst_res, res)
            phi, phi_hat = psi, hat
            t_hi = t_lo
        results[j] = phi.copy()
        lap_l1[j] = l1(lap)
    idx = range(len(out_times))
    phis = [results[i] for i in idx]
    return DualSolution(out_times, phis, np.array([lap_l1[i] for i in idx]),
                        np.array([float(np.max(np.abs(p))) for p in phis]), total_iter, worst_res)


@dataclass
class PairingReport:
    times: np.ndarray
    pairings: np.ndarray
    reference: float
    max_deviation: float
    tolerance: float
    step2_bound: float
    lap_l1_ratio: float
    sup_ratio: float
    mu: float
    d_ref: float
    dual: DualSolution = None

    @property
    def passed(self):
        return self.max_deviation <= self.tolerance

    def to_dict(self):
        return {"times": self.times.tolist(), "pairings": self.pairings.tolist(),
                "reference": self.reference, "max_deviation": self.max_deviation,
                "tolerance": self.tolerance, "step2_bound": self.step2_bound,
                "lap_l1_ratio": self.lap_l1_ratio, "sup_ratio": self.sup_ratio,
                "mu": self.mu, "d_ref": self.d_ref, "passed": self.passed}


def pairing_audit(collector, phi_T, dt=None, rtol=1e-3, atol=1e-8, normalize=True):
    """Check that ``int rho(t) phi(t) dx`` is constant along the dual solution.

    ``phi_T`` is rescaled to ``||Delta phi_T||_1 = 1`` when ``normalize`` is set.
    """
    series = collector.series
    grid = series.grid
    phi_T = np.asarray(phi_T, dtype=float)
    if normalize:
        phi_T = phi_T / float(integrate(grid, np.abs(laplacian_spectral(grid, phi_T))))
    if dt is None:
        dt = 0.5 * float(np.min(np.diff(series.times))) if len(series.times) > 1 else 1.0
    sol = dual_backward_solve(series, phi_T, dt)
    pair = np.array([float(integrate(grid, r * p)) for r, p in zip(collector.rho, sol.phis)])
    ref = pair[-1]
    T = series.times[-1] - series.times[0]
    dspec = collector.D
    return PairingReport(
        times=sol.times, pairings=pair, reference=float(ref),
        max_deviation=float(np.max(np.abs(pair - ref))), tolerance=rtol * abs(ref) + atol,
        step2_bound=2.0 * T * collector.mu * dspec.d_hi * float(np.max(sol.lap_l1)),
        lap_l1_ratio=float(np.max(sol.lap_l1) / sol.lap_l1[-1]),
        sup_ratio=float(np.max(sol.sup) / sol.sup[-1]),
        mu=collector.mu, d_ref=dspec.d_ref, dual=sol,
    )
