"""Uniform periodic grids, species fields and the discrete calculus shared by all modules."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Centered periodic box ``[-L/2, L/2)^N`` with ``n`` points per axis.

    Node ``j`` sits at ``-L/2 + j h``, so index ``n // 2`` is the origin.
    """

    N: int
    n: int
    L: float

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.N}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"points per axis must be even and >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def h(self):
        return self.L / self.n

    @property
    def shape(self):
        return (self.n,) * self.N

    @property
    def cell_volume(self):
        return self.h**self.N

    @property
    def volume(self):
        return self.L**self.N

    @property
    def center_index(self):
        return (self.n // 2,) * self.N

    def axis(self):
        return -0.5 * self.L + self.h * np.arange(self.n)

    def coords(self):
        """Sparse (broadcastable) coordinate arrays, one per axis."""
        x = self.axis()
        out = []
        for d in range(self.N):
            s = [1] * self.N
            s[d] = self.n
            out.append(x.reshape(s))
        return out

    def index_of(self, point, atol=1e-9):
        """Grid index of ``point``; raises if the point is not a node."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        if point.size != self.N:
            raise ValueError(f"point has {point.size} coordinates, grid has N={self.N}")
        j = (point + 0.5 * self.L) / self.h
        jr = np.rint(j)
        if np.any(np.abs(j - jr) > atol):
            raise ValueError(f"point {point.tolist()} is not a grid node (h={self.h})")
        return tuple(int(v) % self.n for v in jr)

    def radius(self, center=None):
        """Periodic distance from ``center`` (default origin) to every node."""
        center = np.zeros(self.N) if center is None else np.atleast_1d(np.asarray(center, float))
        r2 = 0.0
        for x, c in zip(self.coords(), center):
            d = np.abs(x - c) % self.L
            d = np.minimum(d, self.L - d)
            r2 = r2 + d * d
        return np.sqrt(np.broadcast_to(r2, self.shape))

    def abs_x(self):
        """Box-centered ``|x|`` (no wrapping), used for the confinement moment."""
        r2 = 0.0
        for x in self.coords():
            r2 = r2 + x * x
        return np.sqrt(np.broadcast_to(r2, self.shape))

    def to_dict(self):
        return {"N": self.N, "n": self.n, "L": self.L}


@dataclass
class SpeciesField:
    """P nonnegative scalar fields on one grid at one time."""

    grid: GridSpec
    data: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape[1:] != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.shape}")

    @property
    def P(self):
        return self.data.shape[0]

    def total(self):
        return self.data.sum(axis=0)

    def copy(self):
        return SpeciesField(self.grid, self.data.copy(), self.t)


@dataclass
class SpaceTimeSlab:
    """Time-ordered snapshots sharing one grid."""

    snapshots: list = field(default_factory=list)
    nu: float = float("nan")

    def __post_init__(self):
        if not self.snapshots:
            return
        g = self.snapshots[0].grid
        t = [s.t for s in self.snapshots]
        if any(s.grid != g for s in self.snapshots):
            raise ValueError("all snapshots must share one grid")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def grid(self):
        return self.snapshots[0].grid

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    @property
    def t_end(self):
        return self.snapshots[-1].t

    @property
    def P(self):
        return self.snapshots[0].P

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]

    def at(self, t, atol=1e-9):
        for s in self.snapshots:
            if abs(s.t - t) <= atol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot at t={t}")

    def window(self, t0, t1, atol=1e-9):
        """Snapshots with ``t0 - atol <= t <= t1 + atol``."""
        return [s for s in self.snapshots if t0 - atol <= s.t <= t1 + atol]


def integrate(grid, f, weight=None):
    """Midpoint rule ``sum f * weight * h^N`` over the trailing grid axes."""
    f = np.asarray(f, dtype=float)
    if f.shape[-grid.N:] != grid.shape:
        raise ValueError(f"field shape {f.shape} does not end with grid shape {grid.shape}")
    if weight is not None:
        weight = np.asarray(weight, dtype=float)
        if weight.shape != grid.shape and weight.shape != f.shape:
            raise ValueError(f"weight shape {weight.shape} does not match field {f.shape}")
        f = f * weight
    axes = tuple(range(f.ndim - grid.N, f.ndim))
    return np.sum(f, axis=axes) * grid.cell_volume


def gradient(grid, f):
    """Second-order central differences with periodic wrap; returns a list of N arrays."""
    f = np.asarray(f, dtype=float)
    off = f.ndim - grid.N
    inv = 1.0 / (2.0 * grid.h)
    return [(np.roll(f, -1, axis=off + d) - np.roll(f, 1, axis=off + d)) * inv for d in range(grid.N)]


def grad_sq(grid, f):
    return sum(g * g for g in gradient(grid, f))


def grad_sqrt_density(grid, a):
    """Pointwise ``|grad sqrt(a)|^2`` by central differences of ``sqrt(a)``."""
    return grad_sq(grid, np.sqrt(np.maximum(a, 0.0)))


def laplacian_fd(grid, f):
    """Second-order centered Laplacian, periodic."""
    f = np.asarray(f, dtype=float)
    off = f.ndim - grid.N
    out = -2.0 * grid.N * f
    for d in range(grid.N):
        out = out + np.roll(f, 1, axis=off + d) + np.roll(f, -1, axis=off + d)
    return out / grid.h**2


def ball_mask(grid, center, radius):
    """Indicator of the open periodic ball ``|x - center| < radius``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if radius > 0.5 * grid.L:
        raise ValueError(f"ball radius {radius} exceeds half the box ({0.5 * grid.L})")
    return (grid.radius(center) < radius).astype(float)


@functools.lru_cache(maxsize=16)
def _edge_mask(grid):
    m = np.zeros(grid.shape, dtype=bool)
    for d in range(grid.N):
        idx = [slice(None)] * grid.N
        idx[d] = [0, grid.n - 1]
        m[tuple(idx)] = True
    return m


def boundary_mass_fraction(grid, data):
    """Fraction of total mass in the outermost cell layer (the periodic seam)."""
    data = np.asarray(data, dtype=float)
    tot = np.sum(data)
    if tot <= 0:
        return 0.0
    edge = np.sum(data[..., _edge_mask(grid)]) if data.ndim > grid.N else np.sum(data[_edge_mask(grid)])
    return float(edge / tot)


def ball_volume(N, r=1.0):
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1) * r**N


def sphere_area(N, r=1.0):
    return N * ball_volume(N, r) / r
