"""Maximum principle for two-species exchange systems ``Q_1 = Q = -Q_2``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .reports import PropertyReport


def _scalar_rate(model):
    if hasattr(model, "scalar_rate"):
        return model.scalar_rate
    return lambda a1, a2: model.rate(np.stack([a1, a2]))[0]


def sign_condition_check(model, n_samples=100_000, seed=0, tol=1e-12):
    """Sample ``Q(a1, a2)(a1 - a2) <= tol * scale`` on the closed positive quadrant.

    Samples are log-uniform pairs plus points on the diagonal and on both axes.
    """
    if model.P != 2:
        raise ValueError(f"sign condition is for P = 2 models, got P = {model.P}")
    rng = np.random.default_rng(seed)
    m = n_samples // 4
    lo, hi = np.log(1e-6), np.log(1e3)
    a1 = np.exp(rng.uniform(lo, hi, n_samples - 3 * m))
    a2 = np.exp(rng.uniform(lo, hi, n_samples - 3 * m))
    d = np.exp(rng.uniform(lo, hi, m))
    ax = np.exp(rng.uniform(lo, hi, m))
    A1 = np.concatenate([a1, d, ax, np.zeros(m)])
    A2 = np.concatenate([a2, d, np.zeros(m), ax])
    q = _scalar_rate(model)(A1, A2)
    prod = q * (A1 - A2)
    scale = np.maximum(1.0, np.abs(q) * np.abs(A1 - A2))
    bad = prod > tol * scale
    worst = int(np.argmax(prod / scale))
    return PropertyReport("sign_condition", not np.any(bad), float(np.max(prod / scale)), tol,
                          {"violations": int(np.sum(bad)), "n_samples": int(A1.size),
                           "witness": [float(A1[worst]), float(A2[worst])]})


@dataclass
class MaxReport:
    times: list = field(default_factory=list)
    sup1: list = field(default_factory=list)
    sup2: list = field(default_factory=list)
    initial_sup: float = float("nan")
    tol: float = 1e-8
    sign_condition: PropertyReport | None = None

    @property
    def running_sup(self):
        return float(max(max(a, b) for a, b in zip(self.sup1, self.sup2)))

    @property
    def excess(self):
        return self.running_sup - self.initial_sup

    @property
    def passed(self):
        return self.running_sup <= self.initial_sup * (1.0 + self.tol)

    def rows(self):
        return [{"t": t, "sup1": a, "sup2": b} for t, a, b in zip(self.times, self.sup1, self.sup2)]


def max_report_from_slab(slab, tol=1e-8):
    rep = MaxReport(tol=tol)
    for s in slab:
        rep.times.append(float(s.t))
        rep.sup1.append(float(np.max(s.data[0])))
        rep.sup2.append(float(np.max(s.data[1])))
    rep.initial_sup = max(rep.sup1[0], rep.sup2[0])
    return rep


def maxprinciple_run(cfg, tol=1e-8, n_samples=100_000):
    """Run a P = 2 scenario and monitor ``sup a_1`` and ``sup a_2`` at every stored time."""
    from .solver import run

    if cfg.model.P != 2:
        raise ValueError("maximum-principle runs need a two-species model")
    sign = sign_condition_check(cfg.model, n_samples)
    if not sign.passed:
        raise ValueError(f"reaction violates the sign condition at {sign.details['witness']}")
    res = run(cfg, weak_norms=False)
    rep = max_report_from_slab(res.slab, tol)
    rep.sign_condition = sign
    return rep, res


def total_sup_monitor(slab):
    """``sup rho`` at each snapshot (non-increasing when all diffusivities agree)."""
    return np.array([float(np.max(s.total())) for s in slab])
