"""Reaction maps for mass-conserving, entropy-dissipating reaction-diffusion systems.

States are arrays whose first axis indexes the species, so a single state has
shape ``(P,)`` and a field on a grid has shape ``(P, n, ..., n)``.  Every rate
evaluator maps such an array to one of the same shape.

The four structural conditions checked by :func:`verify_hypotheses` are

* quasi-positivity: ``Q_i(a) >= 0`` whenever ``a_i <= 0``,
* sub-quadratic growth: ``|grad Q_i(a)| <= Lambda |a|^(nu-1)`` on the positive orthant,
* mass conservation: ``sum_i Q_i(a) = 0``,
* entropy dissipation: ``sum_i ln(a_i) Q_i(a) <= 0``.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

logger = logging.getLogger(__name__)

EPS_FLOOR = 1e-300

# Sampling box used by verify_hypotheses (per-component magnitudes).
SAMPLE_LO = 1e-6
SAMPLE_HI = 1e3

# Smallest dyadic rescaling the growth constant must survive unchanged.
EPS_CERT = 0.125

LAMBDA_MARGIN = 1.01


class ReactionModel:
    """Base class for a reaction map ``Q: R^P -> R^P``.

    Subclasses implement :meth:`rate`; :meth:`jacobian` falls back to central
    finite differences.
    """

    name = "custom"

    def __init__(self, P, nu, Lambda, a_cert=None):
        if int(P) < 1:
            raise ValueError(f"species count must be >= 1, got {P}")
        if not 0.0 < nu < 2.0:
            raise ValueError(f"growth exponent must lie in (0, 2), got {nu}")
        if not Lambda > 0:
            raise ValueError(f"growth constant must be positive, got {Lambda}")
        self.P = int(P)
        self.nu = float(nu)
        self.Lambda = float(Lambda)
        # componentwise magnitude bound on which Lambda was measured
        self.a_cert = a_cert

    def __repr__(self):
        return f"{type(self).__name__}(P={self.P}, nu={self.nu}, Lambda={self.Lambda:.6g})"

    def rate(self, a):
        raise NotImplementedError

    def __call__(self, a):
        return self.rate(a)

    def _check_shape(self, a):
        a = np.asarray(a, dtype=float)
        if a.shape[:1] != (self.P,):
            raise ValueError(f"state has leading dimension {a.shape[:1]}, model expects P={self.P}")
        return a

    def jacobian(self, a):
        """Return ``J[i, j] = dQ_i/da_j`` with shape ``(P, P, ...)``."""
        a = self._check_shape(a)
        return fd_jacobian(self.rate, a)

    def stiffness(self, a):
        """Largest absolute Jacobian row sum over all cells of ``a``."""
        J = self.jacobian(a)
        return float(np.max(np.sum(np.abs(J), axis=1))) if J.size else 0.0

    def active_mask(self, a):
        """Cells where ``Q(a)`` may be nonzero, or ``None`` for all cells.

        Outside the mask the rate must vanish exactly, so an explicit ODE
        step leaves those cells bit-for-bit unchanged.
        """
        return None

    def describe(self):
        return {"family": self.name, "P": self.P, "nu": self.nu, "Lambda": self.Lambda}


def fd_jacobian(rate, a, rel_step=1e-6):
    """Central-difference Jacobian of ``rate`` at ``a`` (species on axis 0).

    Steps never cross into negative values: near zero a one-sided quotient is
    used so that the positive orthant is not left.
    """
    a = np.asarray(a, dtype=float)
    P = a.shape[0]
    J = np.empty((P, P) + a.shape[1:])
    for j in range(P):
        h = rel_step * np.maximum(np.abs(a[j]), 1e-3)
        lo_ok = a[j] - h >= 0
        hi = a.copy()
        lo = a.copy()
        hi[j] = a[j] + h
        lo[j] = np.where(lo_ok, a[j] - h, a[j])
        span = np.where(lo_ok, 2 * h, h)
        J[:, j] = (rate(hi) - rate(lo)) / span
    return J


def _bridge(z):
    """Smooth step equal to 0 at z <= 0 and 1 at z >= 1, with all derivatives flat."""
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 1.0, 1.0, 0.0)
    inner = (z > 0.0) & (z < 1.0)
    if np.any(inner):
        zi = z[inner]
        with np.errstate(over="ignore"):
            out[inner] = expit(1.0 / (1.0 - zi) - 1.0 / zi)
    return out


def _bridge_prime(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inner = (z > 0.0) & (z < 1.0)
    if np.any(inner):
        zi = z[inner]
        with np.errstate(over="ignore", invalid="ignore"):
            b = expit(1.0 / (1.0 - zi) - 1.0 / zi)
            d = b * (1.0 - b) * (1.0 / (1.0 - zi) ** 2 + 1.0 / zi**2)
        out[inner] = np.where(b * (1.0 - b) > 0.0, d, 0.0)
    return out


def evaluate_phi(nu, z):
    """Nondecreasing smooth rate profile: 0 for z <= 0 and ``z**(nu/2)`` for z >= 1.

    On (0, 1) the power is multiplied by the bump-quotient bridge
    ``g(z) / (g(z) + g(1 - z))`` with ``g(t) = exp(-1/t)``.
    """
    if not 0.0 < nu < 2.0:
        raise ValueError(f"nu must lie in (0, 2), got {nu}")
    z = np.asarray(z, dtype=float)
    zp = np.maximum(z, 0.0)
    out = zp ** (0.5 * nu)
    mid = (z > 0.0) & (z < 1.0)
    if np.any(mid):
        out = np.where(mid, out * _bridge(np.where(mid, z, 0.0)), out)
    out = np.where(z > 0.0, out, 0.0)
    return out if out.ndim else float(out)


def evaluate_phi_prime(nu, z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    pos = z > 0.0
    zp = np.where(pos, z, 1.0)
    power = zp ** (0.5 * nu)
    dpower = 0.5 * nu * zp ** (0.5 * nu - 1.0)
    mid = pos & (z < 1.0)
    out = np.where(pos, dpower, 0.0)
    if np.any(mid):
        zm = np.where(mid, z, 0.5)
        b = _bridge(zm)
        db = _bridge_prime(zm)
        out = np.where(mid, dpower * b + power * db, out)
    return out if out.ndim else float(out)


class FourSpeciesExchange(ReactionModel):
    """``Q_i(a) = (-1)^i (phi(a1 a3) - phi(a2 a4))`` for the reversible reaction A1 + A3 <-> A2 + A4."""

    name = "four_species_exchange"
    signs = np.array([-1.0, 1.0, -1.0, 1.0])
    # below this product the bridge underflows and phi, phi' are exactly 0.0
    zero_product = 1.0 / 750.0

    def __init__(self, nu=1.5, Lambda=None):
        a_cert = certification_box(nu)
        if Lambda is None:
            Lambda = frozen_lambda(nu)
        super().__init__(4, nu, Lambda, a_cert=a_cert)

    def _flux(self, a):
        a = self._check_shape(a)
        return evaluate_phi(self.nu, a[0] * a[2]) - evaluate_phi(self.nu, a[1] * a[3])

    def rate(self, a):
        w = np.asarray(self._flux(a))
        s = self.signs.reshape((4,) + (1,) * w.ndim)
        return s * w

    def jacobian(self, a):
        a = self._check_shape(a)
        p13 = evaluate_phi_prime(self.nu, a[0] * a[2])
        p24 = evaluate_phi_prime(self.nu, a[1] * a[3])
        dw = np.stack([p13 * a[2], -p24 * a[3], p13 * a[0], -p24 * a[1]])
        s = self.signs.reshape((4, 1) + (1,) * (a.ndim - 1))
        return s * dw[None]

    def stiffness(self, a):
        a = self._check_shape(a)
        p13 = evaluate_phi_prime(self.nu, a[0] * a[2])
        p24 = evaluate_phi_prime(self.nu, a[1] * a[3])
        rows = p13 * (np.abs(a[0]) + np.abs(a[2])) + p24 * (np.abs(a[1]) + np.abs(a[3]))
        return float(np.max(rows))

    def active_mask(self, a):
        a = self._check_shape(a)
        return (a[0] * a[2] > self.zero_product) | (a[1] * a[3] > self.zero_product)

    def describe(self):
        d = super().describe()
        d.update(bridge="exp(-1/t) quotient on [0,1]", a_cert=self.a_cert)
        return d


class TwoSpeciesExchange(ReactionModel):
    """Linear exchange ``Q_1 = k (a2 - a1) = -Q_2``; satisfies the growth bound with nu = 1."""

    name = "two_species_exchange"

    def __init__(self, k=1.0):
        self.k = float(k)
        super().__init__(2, 1.0, np.sqrt(2.0) * abs(self.k))

    def scalar_rate(self, a1, a2):
        return self.k * (np.asarray(a2, dtype=float) - np.asarray(a1, dtype=float))

    def rate(self, a):
        a = self._check_shape(a)
        q = self.scalar_rate(a[0], a[1])
        return np.stack([q, -q])

    def jacobian(self, a):
        a = self._check_shape(a)
        one = np.ones(a.shape[1:])
        k = self.k
        return np.array([[-k * one, k * one], [k * one, -k * one]])

    def stiffness(self, a):
        return 2.0 * abs(self.k)


class ZeroReaction(ReactionModel):
    name = "zero"

    def __init__(self, P, nu=1.5):
        super().__init__(P, nu, 1.0)

    def rate(self, a):
        return np.zeros_like(self._check_shape(a))

    def jacobian(self, a):
        a = self._check_shape(a)
        return np.zeros((self.P, self.P) + a.shape[1:])

    def stiffness(self, a):
        return 0.0

    def active_mask(self, a):
        return np.zeros(np.shape(a)[1:], dtype=bool)


class CallableReaction(ReactionModel):
    """Wrap a user-supplied rate function ``f(a) -> Q(a)`` (species on axis 0)."""

    def __init__(self, f, P, nu, Lambda, name="custom"):
        super().__init__(P, nu, Lambda)
        self._f = f
        self.name = name

    def rate(self, a):
        return np.asarray(self._f(self._check_shape(a)), dtype=float)


def entropy_production(model, a):
    """Pointwise entropy production ``-sum_i Q_i(a) ln a_i`` (logs floored at EPS_FLOOR)."""
    a = model._check_shape(a)
    q = model.rate(a)
    return -np.sum(q * np.log(np.maximum(a, EPS_FLOOR)), axis=0)


def evaluate_reaction(model, a):
    return model.rate(a)


# --------------------------------------------------------------------------
# growth-constant calibration

def certification_box(nu, eps=EPS_CERT):
    """Componentwise bound covering the sample box and its pre-images under rescaling down to ``eps``."""
    return SAMPLE_HI * eps ** (-2.0 / (nu - 1.0)) if nu > 1.0 else SAMPLE_HI


def growth_quotient(model, a):
    """``max_i |grad Q_i(a)| / |a|^(nu-1)`` for states ``a`` of shape ``(P, m)``."""
    J = model.jacobian(a)
    grad = np.sqrt(np.sum(J**2, axis=1))  # (P, m)
    norm = np.sqrt(np.sum(np.asarray(a) ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.max(grad, axis=0) / norm ** (model.nu - 1.0)
    return np.where(norm > 0, q, 0.0)


def calibrate_lambda(model, a_max, n_random=200_000, seed=0):
    """Measure ``sup |grad Q| / |a|^(nu-1)`` over ``[0, a_max]^P``.

    Random log-uniform states are combined with corner states where one
    factor of each product sits at ``a_max``; the best candidates are then
    polished with a bounded local search.  Returns the raw supremum (no margin).
    """
    rng = np.random.default_rng(seed)
    P = model.P
    lo = np.log(SAMPLE_LO)
    hi = np.log(a_max)
    cand = [np.exp(rng.uniform(lo, hi, size=(P, n_random)))]
    # corner family: large/small pairs with products swept across the bridge
    z = np.concatenate([np.geomspace(1e-3, 10.0, 400), [1.0]])
    big = np.full_like(z, a_max)
    zeros = np.zeros_like(z)
    if P == 4:
        for (i, j), (k, l) in (((0, 2), (1, 3)), ((1, 3), (0, 2))):
            for other in ("zero", "corner"):
                s = np.empty((4, z.size))
                s[i], s[j] = big, z / a_max
                if other == "zero":
                    s[k], s[l] = zeros, zeros
                else:
                    s[k], s[l] = big, z / a_max
                cand.append(s)
    states = np.concatenate(cand, axis=1)
    q = growth_quotient(model, states)
    order = np.argsort(q)[::-1][:20]
    best = float(q[order[0]])

    def neg(logs):
        s = np.exp(np.clip(logs, np.log(1e-12), hi))[:, None]
        return -float(growth_quotient(model, s)[0])

    bounds = [(np.log(1e-12), hi)] * P
    for idx in order:
        x0 = np.log(np.maximum(states[:, idx], 1e-12))
        res = optimize.minimize(neg, x0, method="L-BFGS-B", bounds=bounds)
        best = max(best, -res.fun)
    return best


@functools.lru_cache(maxsize=None)
def _calibrated_lambda(nu):
    probe = FourSpeciesExchange(nu, Lambda=1.0)
    return LAMBDA_MARGIN * calibrate_lambda(probe, certification_box(nu))


# Frozen calibration for the reference exponent; reproduced by the test suite.
FROZEN_LAMBDA = {1.5: 4689.718}


def frozen_lambda(nu):
    if nu in FROZEN_LAMBDA:
        return FROZEN_LAMBDA[nu]
    return _calibrated_lambda(float(nu))


# --------------------------------------------------------------------------
# hypothesis verification

@dataclass
class HypothesisResult:
    name: str
    n_checked: int
    worst: float  # largest signed relative violation; negative values are slack
    n_violations: int
    witness: list | None = None

    @property
    def passed(self):
        return self.n_violations == 0


@dataclass
class HypothesisReport:
    model: dict
    n_samples: int
    seed: int
    tol: float
    results: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.results.values())

    def to_dict(self):
        return {
            "model": self.model,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "tol": self.tol,
            "passed": self.passed,
            "hypotheses": {
                k: {"n_checked": r.n_checked, "worst": r.worst,
                    "n_violations": r.n_violations, "passed": r.passed, "witness": r.witness}
                for k, r in self.results.items()
            },
        }


def sample_states(P, n_samples, seed):
    """Log-uniform magnitudes on [1e-6, 1e3]; returns (positive, boundary) samples.

    The boundary set puts one randomly chosen component at zero (half the
    samples) or at a negative value (other half), others stay positive.
    """
    rng = np.random.default_rng(seed)
    pos = np.exp(rng.uniform(np.log(SAMPLE_LO), np.log(SAMPLE_HI), size=(P, n_samples)))
    n_b = max(1, n_samples // 4)
    bnd = np.exp(rng.uniform(np.log(SAMPLE_LO), np.log(SAMPLE_HI), size=(P, n_b)))
    which = rng.integers(0, P, size=n_b)
    neg = -np.exp(rng.uniform(np.log(SAMPLE_LO), np.log(SAMPLE_HI), size=n_b))
    vals = np.where(np.arange(n_b) % 2 == 0, 0.0, neg)
    bnd[which, np.arange(n_b)] = vals
    return pos, bnd, which


def _result(name, viol, states, tol):
    viol = np.asarray(viol, dtype=float)
    bad = viol > tol
    i = int(np.argmax(viol)) if viol.size else 0
    witness = states[:, i].tolist() if bad.any() else None
    return HypothesisResult(name, int(viol.size), float(viol.max()) if viol.size else 0.0,
                            int(bad.sum()), witness)


def verify_hypotheses(model, n_samples=100_000, seed=0, tol=1e-9):
    """Sample states and report the worst relative violation of each structural condition.

    Violations never raise; they are counted in the returned report.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pos, bnd, which = sample_states(model.P, n_samples, seed)
    # positive samples with some exact zeros for the conservation check
    report = HypothesisReport(model.describe(), n_samples, seed, tol)

    # quasi-positivity on the boundary samples
    qb = model.rate(bnd)
    qi = qb[which, np.arange(bnd.shape[1])]
    scale = np.max(np.abs(qb), axis=0) + 1e-300
    report.results["positivity"] = _result("positivity", -qi / scale, bnd, tol)

    # conservation (include the zero-component boundary states)
    zero_b = bnd[:, np.all(bnd >= 0, axis=0)]
    allpos = np.concatenate([pos, zero_b], axis=1)
    q = model.rate(allpos)
    scale = np.sqrt(np.sum(q**2, axis=0))
    tot = np.abs(np.sum(q, axis=0))
    report.results["conservation"] = _result(
        "conservation", np.where(scale > 0, tot / np.where(scale > 0, scale, 1), tot), allpos, tol)

    # entropy dissipation on the strictly positive orthant
    qp = q[:, : pos.shape[1]]
    logs = np.log(pos)
    s = np.sum(logs * qp, axis=0)
    scale = np.sum(np.abs(logs * qp), axis=0) + 1e-300
    report.results["entropy"] = _result("entropy", s / scale, pos, tol)

    # sub-quadratic growth (analytic Jacobian when the model has one)
    grad = np.sqrt(np.sum(model.jacobian(allpos) ** 2, axis=1)).max(axis=0)
    norm = np.sqrt(np.sum(allpos**2, axis=0))
    bound = model.Lambda * norm ** (model.nu - 1.0)
    viol = np.where(bound > 0, (grad - bound) / np.where(bound > 0, bound, 1), grad)
    report.results["growth"] = _result("growth", viol, allpos, tol)
    return report


def model_from_config(frag):
    """Build a model from ``{family, nu, P, ...}``."""
    family = frag.get("family")
    if family == "four_species_exchange":
        P = frag.get("P", 4)
        if P != 4:
            raise ValueError("four_species_exchange requires P = 4")
        return FourSpeciesExchange(frag.get("nu", 1.5), Lambda=frag.get("Lambda"))
    if family == "two_species_exchange":
        if frag.get("P", 2) != 2:
            raise ValueError("two_species_exchange requires P = 2")
        return TwoSpeciesExchange(frag.get("k", 1.0))
    if family == "zero":
        return ZeroReaction(frag["P"], frag.get("nu", 1.5))
    raise ValueError(f"unknown reaction family {family!r}")
