"""Command-line entry point.

Every subcommand prints NDJSON report lines on stdout and, when ``--out`` is
given, writes the same lines plus figures and an atomic ``manifest.json``.

Exit codes: 0 ok, 2 config error, 3 invariant violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load
from .reports import PropertyReport, ndjson_line

logger = logging.getLogger("rdlab")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL = 0, 2, 3, 4

# run monitors
MASS_DRIFT_TOL = 1e-10
CLIP_TOL = 1e-8
ENTROPY_TOL = 1e-6
WEAK_NORM_TOL = 1e-2


class Failure(Exception):
    def __init__(self, code, reason, message, extra=None):
        super().__init__(message)
        self.code, self.reason, self.extra = code, reason, extra or {}


def load_anchors():
    return json.loads(resources.files("rdlab").joinpath("anchors.json").read_text())


# --------------------------------------------------------------------------
# output helpers

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data if isinstance(data, bytes) else data.encode())
    os.replace(tmp, path)
    return path


class Output:
    """Collects emitted files and report lines for one subcommand."""

    def __init__(self, out, command):
        self.dir = None if out is None else Path(out)
        self.command = command
        self.files = []
        self.lines = []
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def emit(self, obj):
        line = ndjson_line(obj.to_dict() if hasattr(obj, "to_dict") else obj)
        self.lines.append(line)
        sys.stdout.write(line)

    def write(self, name, data):
        if self.dir is None:
            return None
        p = atomic_write(self.dir / name, data)
        self.files.append(p)
        return p

    def add(self, path):
        if path is not None:
            self.files.append(Path(path))

    def figure(self, fn, name, *args, **kw):
        if self.dir is None:
            return None
        p = fn(*args, path=self.dir / name, **kw)
        self.files.append(Path(p))
        return p

    def finish(self, wall, config_hash=None, clipped=None, boundary_max=None, status="ok"):
        if self.dir is None:
            return
        self.write(f"{self.command}.ndjson", "".join(self.lines))
        index = [{"path": p.relative_to(self.dir).as_posix(), "sha256": sha256_file(p),
                  "bytes": p.stat().st_size} for p in sorted(set(self.files))]
        manifest = {"command": self.command, "version": __version__, "config_hash": config_hash,
                    "wall_time": wall, "clipped_mass_total": clipped, "boundary_mass_max": boundary_max,
                    "status": status, "files": index}
        atomic_write(self.dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def write_failure(out, code, reason, message, extra=None):
    rec = {"exit_code": code, "reason": reason, "message": message} | (extra or {})
    sys.stderr.write(ndjson_line(rec))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        atomic_write(Path(out) / "failure.json", json.dumps(rec, indent=2) + "\n")


def _anchor(text, N):
    """Parse ``t,x,y,z`` into ``(t, x0)``; missing coordinates are zero."""
    if text is None:
        return None, None
    vals = [float(v) for v in text.split(",")]
    t, x = vals[0], vals[1:]
    if len(x) > N:
        raise ConfigError(f"anchor has {len(x)} space coordinates for N = {N}")
    return t, tuple(x + [0.0] * (N - len(x)))


def _config(args):
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return load(args.config)


def _slab(args):
    from .rdf import read_slab

    if args.slab is None:
        raise ConfigError("--slab is required for this command")
    try:
        return read_slab(args.slab)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def _slab_config(args):
    """Config for a slab: explicit ``--config`` or the copy stored with the run."""
    if args.config is not None:
        return load(args.config)
    p = Path(args.slab) / "config.json"
    if p.exists():
        return load(p)
    return None


# --------------------------------------------------------------------------
# subcommands

def cmd_run(args, out):
    from . import plotting
    from .entropy import entropy_monotonicity, m0, to_csv, to_ndjson
    from .rdf import snapshot_name, write_snapshot
    from .solver import NumericalFailure, StabilityError, preflight, run
    from .config import make_initial

    cfg = _config(args)
    init = make_initial(cfg.initial, cfg.grid, cfg.P, cfg.seed)
    try:
        preflight(cfg.model, init, cfg.dt, cfg.reaction_substeps)
    except StabilityError as exc:
        raise ConfigError(str(exc), reason="reaction_stability") from None
    try:
        res = run(cfg, initial=init)
    except StabilityError as exc:
        raise Failure(EXIT_NUMERICAL, "reaction_stability", str(exc)) from None
    except NumericalFailure as exc:
        extra = {}
        if out.dir is not None and exc.last_good is not None:
            write_snapshot(out.dir / "last_good.rdf", exc.last_good, cfg.model.nu)
            extra["last_good"] = "last_good.rdf"
        raise Failure(EXIT_NUMERICAL, "numerical_failure", str(exc), extra) from None

    if out.dir is not None:
        (out.dir / "snapshots").mkdir(exist_ok=True)
        for i, s in enumerate(res.slab):
            p = out.dir / "snapshots" / snapshot_name(i)
            write_snapshot(p, s, cfg.model.nu)
            out.add(p)
        out.write("config.json", cfg.source_bytes or json.dumps(cfg.raw, sort_keys=True))
        out.write("diagnostics.ndjson", to_ndjson(res.records))
        out.write("diagnostics.csv", to_csv(res.records))
        out.figure(plotting.plot_diagnostics, "diagnostics.png", res.records)
        out.figure(plotting.plot_midplane, "final_midplane.png", res.slab[-1])

    mono = entropy_monotonicity(res.records, ENTROPY_TOL)
    checks = [
        PropertyReport("mass_drift", res.mass_drift <= MASS_DRIFT_TOL, res.mass_drift, MASS_DRIFT_TOL),
        PropertyReport("clipped_mass", res.clipped_fraction <= CLIP_TOL, res.clipped_fraction, CLIP_TOL,
                       {"total": res.clip_log.total, "per_species": res.clip_log.per_species}),
        PropertyReport("entropy_monotone", mono.passed, mono.max_rel_increase, ENTROPY_TOL,
                       {"worst_index": mono.worst_index}),
    ]
    wn = [r.weak_norm for r in res.records]
    if all(v is not None for v in wn) and len(wn) > 1:
        from .weaknorm import monotonicity_check

        wm = monotonicity_check(res.slab, WEAK_NORM_TOL, norms=wn)
        checks.append(PropertyReport("weak_norm_monotone", wm.passed, wm.max_rel_increase, WEAK_NORM_TOL))
    # boundary mass is reported, not enforced: the periodic seam is a modelling flag
    checks.append(PropertyReport("boundary_mass", True, res.boundary_mass_max, 1e-6,
                                 {"flag": res.boundary_mass_max >= 1e-6}))
    out.emit({"summary": "run", "n_steps": res.n_steps, "snapshots": len(res.slab), "mass0": res.mass0,
              "M0": m0(res.slab[0]).M0, "config_hash": cfg.config_hash()})
    for c in checks:
        out.emit(c)
    ok = all(c.passed for c in checks)
    return ok, {"config_hash": cfg.config_hash(), "clipped": res.clip_log.total,
                "boundary_max": res.boundary_mass_max}


def cmd_diagnose(args, out):
    from . import plotting
    from .entropy import entropy_identity_check, entropy_monotonicity, record, to_ndjson
    from .weaknorm import weak_norm

    slab = _slab(args)
    cfg = _slab_config(args)
    if cfg is None:
        raise ConfigError("diagnose needs --config (or a config.json next to the snapshots)")
    model, D = cfg.model, cfg.D
    with_wn = slab.grid.N == 3
    recs = [record(s, model, weak_norm=weak_norm(s.total(), s.grid) if with_wn else None) for s in slab]
    out.write("diagnostics.ndjson", to_ndjson(recs))
    out.figure(plotting.plot_diagnostics, "diagnostics.png", recs)
    mono = entropy_monotonicity(recs, ENTROPY_TOL)
    checks = [PropertyReport("entropy_monotone", mono.passed, mono.max_rel_increase, ENTROPY_TOL)]
    if len(slab) > 1:
        ident = entropy_identity_check(slab, model, D)
        # quadrature at the snapshot cadence: informational, not a monitor
        out.emit(PropertyReport("entropy_identity", ident.passed, ident.rel_error, ident.tol,
                                {"change": ident.entropy_change, "dissipated": ident.dissipated}))
    m = np.array([r.mass for r in recs])
    drift = float(np.max(np.abs(m - m[0])) / m[0]) if m[0] > 0 else 0.0
    checks.append(PropertyReport("mass_drift", drift <= MASS_DRIFT_TOL, drift, MASS_DRIFT_TOL))
    for c in checks:
        out.emit(c)
    return all(c.passed for c in checks), {"config_hash": cfg.config_hash()}


def cmd_weaknorm(args, out):
    from . import plotting
    from .weaknorm import monotonicity_check

    slab = _slab(args)
    if slab.grid.N != 3:
        raise ConfigError(f"the weak norm is only available for N = 3 (slab has N = {slab.grid.N})")
    res = monotonicity_check(slab, WEAK_NORM_TOL)
    for r in res.reports:
        out.emit(r)
    out.figure(plotting.plot_weak_norm, "weak_norm.png", [r.t for r in res.reports],
               [r.norm for r in res.reports])
    rep = PropertyReport("weak_norm_monotone", res.passed, res.max_rel_increase, WEAK_NORM_TOL)
    out.emit(rep)
    if args.p is not None:
        from .weaknorm import interpolation_bound

        out.emit(interpolation_bound(slab, args.p, norms=[r.norm for r in res.reports]))
    return rep.passed, {}


def cmd_degiorgi(args, out):
    from . import plotting
    from .degiorgi import (CoverageError, TruncationLadder, compute_ladder, local_bound_experiment,
                           recursion_check)

    slab = _slab(args)
    N = slab.grid.N
    t0, x0 = _anchor(args.anchor, N)
    t0 = slab.t_end if t0 is None else t0
    ladder = TruncationLadder(args.n_max, t0, x0)
    try:
        energy = compute_ladder(slab, ladder)
    except CoverageError as exc:
        raise ConfigError(str(exc), reason="coverage") from None
    for row in energy.rows():
        out.emit(row)
    rec = recursion_check(energy.U, N)
    out.emit(rec.to_dict() | {"name": "recursion"})
    out.figure(plotting.plot_ladder, "ladder.png", energy.U, fit=rec.beta)
    ok = rec.passed
    if args.p is not None:
        anchors = load_anchors()["delta_star"]
        delta = anchors["value"] if abs(args.p - anchors["p"]) < 1e-12 else None
        if delta is None:
            raise ConfigError(f"no calibrated threshold for p = {args.p} (have p = {anchors['p']})")
        try:
            lb = local_bound_experiment(slab, args.p, delta, t0=t0, x0=x0)
        except CoverageError as exc:
            raise ConfigError(str(exc), reason="coverage") from None
        out.emit(lb.to_dict() | {"name": "local_bound"})
        ok = ok and lb.passed
    return ok, {}


def cmd_rescale(args, out):
    from .rdf import snapshot_name, write_snapshot
    from .scaling import ScalingError, ScalingParams, rescale_field, scaling_identity_check

    slab = _slab(args)
    if args.eps is None:
        raise ConfigError("--eps is required")
    N = slab.grid.N
    T, x0 = _anchor(args.anchor, N)
    T = slab.t_end if T is None else T
    nu = slab.nu if args.nu is None else args.nu
    try:
        params = ScalingParams(args.eps, T, x0 or (0.0,) * N, nu)
        scaled = rescale_field(slab, params)
    except (ScalingError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if out.dir is not None:
        (out.dir / "snapshots").mkdir(exist_ok=True)
        for i, s in enumerate(scaled):
            p = out.dir / "snapshots" / snapshot_name(i)
            write_snapshot(p, s, nu)
            out.add(p)
    out.emit({"name": "rescale", "eps": params.eps, "kappa": params.kappa, "amplitude": params.amplitude,
              "T": T, "x0": list(params.x0), "L": scaled.grid.L, "s_range": [scaled.times[0], scaled.t_end],
              "fits_cylinder": params.fits_cylinder()})
    ok = True
    if N == 3:
        rep = scaling_identity_check(slab, params)
        out.emit(rep)
        ok = rep.passed
    return ok, {}


def cmd_maxprinciple(args, out):
    from . import plotting
    from .maxp import maxprinciple_run

    cfg = _config(args)
    try:
        rep, res = maxprinciple_run(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out.emit(rep.sign_condition)
    for row in rep.rows():
        out.emit(row)
    summary = PropertyReport("max_principle", rep.passed, rep.running_sup, rep.initial_sup * (1 + rep.tol),
                             {"excess": rep.excess})
    out.emit(summary)
    out.figure(plotting.plot_max_principle, "max_principle.png", rep)
    return rep.passed, {"config_hash": cfg.config_hash(), "clipped": res.clip_log.total,
                        "boundary_max": res.boundary_mass_max}


def cmd_verify(args, out):
    from .model import FourSpeciesExchange, verify_hypotheses

    if args.config is not None:
        model = load(args.config).model
    else:
        model = FourSpeciesExchange(args.nu if args.nu is not None else 1.5)
    rep = verify_hypotheses(model, args.samples, args.seed)
    out.emit(rep)
    return rep.passed, {}


COMMANDS = {
    "run": cmd_run,
    "diagnose": cmd_diagnose,
    "weaknorm": cmd_weaknorm,
    "degiorgi": cmd_degiorgi,
    "rescale": cmd_rescale,
    "maxprinciple": cmd_maxprinciple,
    "verify-hypotheses": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rdlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="scenario config (JSON or YAML)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--slab", type=Path, help="run directory or directory of RDF1 snapshots")
        p.add_argument("--eps", type=float, help="dyadic rescaling factor")
        p.add_argument("--nu", type=float, help="growth exponent (overrides the slab/model value)")
        p.add_argument("--anchor", help="anchor point t,x,y,z")
        p.add_argument("--p", type=float, help="Lebesgue exponent")
        p.add_argument("--n-max", type=int, default=6, help="deepest ladder level")
        p.add_argument("--samples", type=int, default=100_000)
        p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config is not None and args.out is None and args.command in ("run", "maxprinciple"):
        try:
            out_dir = load(args.config).output
        except ConfigError:
            out_dir = None
        args.out = Path(out_dir) if out_dir else None
    t_start = time.perf_counter()
    out = Output(args.out, args.command)
    try:
        ok, meta = COMMANDS[args.command](args, out)
    except ConfigError as exc:
        write_failure(args.out, EXIT_CONFIG, exc.reason, str(exc))
        return EXIT_CONFIG
    except Failure as exc:
        write_failure(args.out, exc.code, exc.reason, str(exc), exc.extra)
        return exc.code
    if not ok:
        write_failure(args.out, EXIT_INVARIANT, "invariant_violation",
                      f"{args.command}: at least one monitored property failed")
        out.add(None if args.out is None else Path(args.out) / "failure.json")
    wall = time.perf_counter() - t_start
    out.finish(wall, meta.get("config_hash"), meta.get("clipped"), meta.get("boundary_max"),
               "ok" if ok else "invariant_violation")
    return EXIT_OK if ok else EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
