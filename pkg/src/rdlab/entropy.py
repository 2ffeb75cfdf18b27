"""Entropy-type functionals, the initial-data quantity M0, and the a priori budget.

All integrals use the grid midpoint rule; ``a ln a`` is taken as 0 where
``a <= EPS_FLOOR``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .grid import grad_sqrt_density, integrate
from .model import EPS_FLOOR, entropy_production

RECORD_KEYS = ("t", "mass_i", "entropy", "abs_entropy", "moment", "fisher",
               "dissipation", "weak_norm", "clipped_mass")


@dataclass
class DiagnosticsRecord:
    t: float
    mass_i: list
    entropy: float
    abs_entropy: float
    moment: float
    fisher: float
    dissipation: float
    weak_norm: float | None = None
    clipped_mass: float = 0.0

    @property
    def mass(self):
        return math.fsum(self.mass_i)

    def to_dict(self):
        return {k: getattr(self, k) for k in RECORD_KEYS}


def _log_floor(a):
    return np.log(np.maximum(a, EPS_FLOOR))


def xlogx(a):
    a = np.asarray(a, dtype=float)
    return np.where(a > EPS_FLOOR, a * _log_floor(a), 0.0)


def record(field, model, weak_norm=None, clipped_mass=0.0):
    g = field.grid
    a = field.data
    lg = _log_floor(a)
    live = a > EPS_FLOOR
    mass_i = integrate(g, a)
    diss = entropy_production(model, a)
    return DiagnosticsRecord(
        t=float(field.t),
        mass_i=[float(m) for m in mass_i],
        entropy=float(np.sum(integrate(g, np.where(live, a * lg, 0.0)))),
        abs_entropy=float(np.sum(integrate(g, np.where(live, a * np.abs(lg), 0.0)))),
        moment=float(np.sum(integrate(g, a, weight=g.abs_x()))),
        fisher=float(np.sum(integrate(g, grad_sqrt_density(g, a)))),
        dissipation=float(integrate(g, diss)),
        weak_norm=None if weak_norm is None else float(weak_norm),
        clipped_mass=float(clipped_mass),
    )


def weighted_fisher(field, D):
    """``sum_i D_i int |grad a_i|^2 / a_i = 4 sum_i D_i int |grad sqrt(a_i)|^2``."""
    per = integrate(field.grid, grad_sqrt_density(field.grid, field.data))
    return 4.0 * float(np.dot(np.asarray(D, dtype=float), per))


# --------------------------------------------------------------------------
# serialization

def to_ndjson(records):
    return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)


def from_ndjson(text):
    out = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            if tuple(d) != RECORD_KEYS:
                raise ValueError(f"record keys {tuple(d)} differ from {RECORD_KEYS}")
            out.append(DiagnosticsRecord(**d))
    return out


def to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_KEYS)
    for r in records:
        row = r.to_dict()
        row["mass_i"] = json.dumps(row["mass_i"], separators=(",", ":"))
        row["weak_norm"] = "" if row["weak_norm"] is None else repr(row["weak_norm"])
        w.writerow([row[k] if isinstance(row[k], str) else repr(row[k]) for k in RECORD_KEYS])
    return buf.getvalue()


# --------------------------------------------------------------------------
# initial-data quantity

@dataclass
class M0Report:
    M0: float
    per_species: list
    terms: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def m0(initial):
    """``sup_i ( ||a_i||_inf + int a_i (1 + |x| + |ln a_i|) dx )``."""
    g = initial.grid
    a = initial.data
    if a.size == 0:
        return M0Report(0.0, [])
    mass = integrate(g, a)
    moment = integrate(g, a, weight=g.abs_x())
    absent = integrate(g, np.abs(xlogx(a)))
    sup = np.max(a.reshape(a.shape[0], -1), axis=1)
    per = mass + moment + absent + sup
    return M0Report(
        M0=float(np.max(per)),
        per_species=[float(v) for v in per],
        terms={"mass": mass.tolist(), "moment": moment.tolist(),
               "abs_entropy": absent.tolist(), "sup": sup.tolist()},
    )


# --------------------------------------------------------------------------
# monotonicity and budget

def trapezoid_cumulative(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(t)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


@dataclass
class MonotonicityReport:
    max_rel_increase: float
    worst_index: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_increase <= self.tol


def entropy_monotonicity(records, tol=1e-6):
    """Largest relative increase of the entropy between consecutive records."""
    e = np.array([r.entropy for r in records])
    if len(e) < 2:
        return MonotonicityReport(0.0, 0, tol)
    scale = np.maximum(np.abs(e[:-1]), np.array([r.abs_entropy for r in records[:-1]]))
    scale = np.maximum(scale, 1e-300)
    rel = np.diff(e) / scale
    i = int(np.argmax(rel))
    return MonotonicityReport(float(max(rel[i], 0.0)), i, tol)


def budget_lhs(records, d_lo):
    """Left-hand side of the a priori budget as a function of the final time."""
    t = np.array([r.t for r in records])
    weighted = np.array([r.mass + r.moment + r.abs_entropy for r in records])
    running_sup = np.maximum.accumulate(weighted)
    fisher_int = trapezoid_cumulative(t, [r.fisher for r in records])
    diss_int = trapezoid_cumulative(t, [r.dissipation for r in records])
    return t, running_sup + 2.0 * d_lo * fisher_int + diss_int


@dataclass
class BudgetReport:
    C0: float
    C1: float
    C1_scale: float
    holds: bool
    worst_ratio: float
    n_scenarios: int
    quadrature: str = "trapezoid on stored records"

    def to_dict(self):
        return asdict(self)


def _c1_scale(d_lo, d_hi):
    return d_hi**2 / (2.0 * d_lo) if d_lo > 0 else math.inf


def fit_budget(series, d_lo, d_hi, rtol=1e-12):
    """Smallest ``C0 + C1 T_max`` with ``LHS(T) <= (C0 + C1 T)(M0 + 1)`` on every series.

    ``series`` is a list of ``(records, M0)`` pairs sharing one diffusion spec.
    The constants solve a two-variable linear program; ``worst_ratio`` is the
    largest LHS over the fitted bound (at most 1 when the fit is feasible).
    """
    rows, rhs, curves = [], [], []
    t_max = 0.0
    for records, M0 in series:
        if len(records) < 2:
            raise ValueError("budget check needs at least two records per series")
        t, lhs = budget_lhs(records, d_lo)
        curves.append((t, lhs, M0))
        t_max = max(t_max, float(t[-1]))
        for ti, li in zip(t, lhs):
            rows.append([-(M0 + 1.0), -(M0 + 1.0) * ti])
            rhs.append(-li)
    res = optimize.linprog([1.0, max(t_max, 1e-12)], A_ub=np.array(rows), b_ub=np.array(rhs),
                           bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"budget fit failed: {res.message}")
    C0, C1 = (float(v) for v in res.x)
    worst = max(float(np.max(lhs / ((C0 + C1 * t) * (M0 + 1.0)))) for t, lhs, M0 in curves)
    return BudgetReport(C0=C0, C1=C1, C1_scale=_c1_scale(d_lo, d_hi),
                        holds=worst <= 1.0 + rtol, worst_ratio=worst, n_scenarios=len(series))


def budget_check(records, D, M0, C0=None, C1=None):
    """Budget inequality for one trajectory; fits any constant left as ``None``."""
    d_lo, d_hi = min(D), max(D)
    if C0 is not None and C1 is not None:
        t, lhs = budget_lhs(records, d_lo)
        worst = float(np.max(lhs / ((C0 + C1 * t) * (M0 + 1.0))))
        return BudgetReport(C0, C1, _c1_scale(d_lo, d_hi), worst <= 1.0, worst, 1)
    return fit_budget([(records, M0)], d_lo, d_hi)


@dataclass
class IdentityReport:
    entropy_change: float
    dissipated: float
    rel_error: float
    tol: float

    @property
    def passed(self):
        return self.rel_error <= self.tol


def entropy_identity_check(slab, model, D, tol=1e-3):
    """Compare the entropy change with the time integral of its production terms.

    Uses ``d/dt sum int a(1 + ln a) = -sum_i D_i int |grad a_i|^2/a_i - int dissipation``
    with the trapezoid rule on the slab's snapshot cadence.
    """
    t = slab.times
    ent = np.array([record(s, model).entropy + float(np.sum(integrate(s.grid, s.data))) for s in slab])
    prod = np.array([weighted_fisher(s, D) + float(integrate(s.grid, entropy_production(model, s.data)))
                     for s in slab])
    change = float(ent[-1] - ent[0])
    dissipated = float(trapezoid_cumulative(t, prod)[-1])
    rel = abs(change + dissipated) / max(abs(change), 1e-300)
    return IdentityReport(change, dissipated, rel, tol)
