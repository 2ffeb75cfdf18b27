"""Figures written next to the delimited outputs.  Always uses the Agg backend."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path):
    path = os.fspath(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_diagnostics(records, path):
    """Mass per species, entropy and (if present) the weak norm against time."""
    t = np.array([r.t for r in records])
    mass = np.array([r.mass_i for r in records])
    has_wn = any(r.weak_norm is not None for r in records)
    fig, axes = plt.subplots(1, 3 if has_wn else 2, figsize=(11 if has_wn else 8, 3.2))
    ax = axes[0]
    for i in range(mass.shape[1]):
        ax.plot(t, mass[:, i], label=f"a{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("mass")
    ax.legend(fontsize=7)
    axes[1].plot(t, [r.entropy for r in records], "k-")
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("entropy")
    if has_wn:
        axes[2].plot(t, [r.weak_norm for r in records], "C3.-")
        axes[2].set_xlabel("t")
        axes[2].set_ylabel("weak norm of rho")
    return _save(fig, path)


def plot_ladder(U, path, fit=None):
    """Semilog plot of the level-set energies ``U_n``."""
    U = np.asarray(U, dtype=float)
    n = np.arange(len(U))
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    pos = U > 0
    ax.semilogy(n[pos], U[pos], "o-")
    ax.set_xlabel("n")
    ax.set_ylabel("U_n")
    if fit is not None:
        ax.set_title(f"beta = {fit:.3f}", fontsize=9)
    return _save(fig, path)


def plot_weak_norm(times, norms, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(times, norms, ".-")
    ax.set_xlabel("t")
    ax.set_ylabel("max Newtonian potential")
    return _save(fig, path)


def plot_max_principle(rep, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(rep.times, rep.sup1, label="sup a1")
    ax.plot(rep.times, rep.sup2, label="sup a2")
    ax.axhline(rep.initial_sup, color="k", lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_pairing(rep, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(rep.times, rep.pairings - rep.reference, ".-")
    ax.axhline(rep.tolerance, color="k", lw=0.8, ls="--")
    ax.axhline(-rep.tolerance, color="k", lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("pairing - final")
    return _save(fig, path)


def plot_midplane(field, path, species=None):
    """Slice through the centre of a snapshot (total density unless ``species`` is given)."""
    g = field.grid
    f = field.total() if species is None else field.data[species]
    c = g.center_index
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    if g.N == 1:
        ax.plot(g.axis(), f)
        ax.set_xlabel("x")
    else:
        sl = f[(slice(None), slice(None)) + tuple(c[2:])]
        ext = [-g.L / 2, g.L / 2, -g.L / 2, g.L / 2]
        im = ax.imshow(sl.T, origin="lower", extent=ext)
        fig.colorbar(im, ax=ax)
    ax.set_title(f"t = {field.t:.4g}", fontsize=9)
    return _save(fig, path)
