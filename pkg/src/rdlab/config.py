"""Scenario configuration: schema, loading, and deterministic initial data."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .grid import GridSpec, SpeciesField, boundary_mass_fraction, integrate
from .model import model_from_config

SCHEMA_VERSION = 1
BOUNDARY_MASS_TOL = 1e-6


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""

    def __init__(self, message, reason="config"):
        super().__init__(message)
        self.reason = reason


_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "grid", "model", "D", "dt", "t_end", "dt_store", "seed", "initial"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "n", "L"],
            "properties": {
                "N": {"type": "integer", "enum": [1, 2, 3]},
                "n": {"type": "integer", "minimum": 4},
                "L": _pos,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["four_species_exchange", "two_species_exchange", "zero"]},
                "nu": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "P": {"type": "integer", "minimum": 1},
                "D": {"type": "array", "items": _pos, "minItems": 1},
                "k": _number,
                "Lambda": _pos,
            },
        },
        "D": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "dt": _pos,
        "t_end": {"type": "number", "minimum": 0},
        "dt_store": _pos,
        "seed": {"type": "integer"},
        "mu": _pos,
        "reaction_substeps": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "gaussian_bumps", "file"]},
                "params": {"type": "object"},
            },
        },
    },
}

_BUMP_KEYS = {"n_bumps", "amplitude", "width", "spread", "normalize_max", "center"}


@dataclass
class ScenarioConfig:
    raw: dict
    grid: GridSpec
    model: object
    D: tuple
    dt: float
    t_end: float
    dt_store: float
    seed: int
    initial: dict
    mu: float | None = None
    reaction_substeps: int = 1
    output: str | None = None
    source_bytes: bytes = field(default=b"", repr=False)

    @property
    def P(self):
        return self.model.P

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def store_stride(self):
        return int(round(self.dt_store / self.dt))

    def config_hash(self):
        return hashlib.sha256(self.source_bytes or canonical_bytes(self.raw)).hexdigest()

    def with_changes(self, **changes):
        """Return a new validated config with top-level (or dotted) keys replaced."""
        raw = copy.deepcopy(self.raw)
        for key, value in changes.items():
            node = raw
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        return from_dict(raw)


def canonical_bytes(raw):
    return json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()


def _ratio_is_integer(a, b, what):
    r = a / b
    if abs(r - round(r)) > 1e-9 * max(1.0, abs(r)):
        raise ConfigError(f"{what} must be an integer multiple of dt (ratio {r})")


def from_dict(raw, source_bytes=b""):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    g = raw["grid"]
    try:
        grid = GridSpec(g["N"], g["n"], float(g["L"]))
        model = model_from_config(raw["model"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    D = tuple(float(d) for d in raw["D"])
    if "D" in raw["model"] and tuple(float(d) for d in raw["model"]["D"]) != D:
        raise ConfigError("model.D disagrees with top-level D")
    if len(D) != model.P:
        raise ConfigError(f"D has {len(D)} entries but the model has P={model.P}")
    if "P" in raw["model"] and raw["model"]["P"] != model.P:
        raise ConfigError("model.P disagrees with the reaction family")
    dt, t_end, dt_store = float(raw["dt"]), float(raw["t_end"]), float(raw["dt_store"])
    _ratio_is_integer(t_end, dt, "t_end")
    _ratio_is_integer(dt_store, dt, "dt_store")
    init = raw["initial"]
    params = init.get("params", {})
    if init["kind"] == "gaussian_bumps":
        unknown = set(params) - _BUMP_KEYS
        if unknown:
            raise ConfigError(f"initial.params: unknown keys {sorted(unknown)}")
    elif init["kind"] == "constant":
        if set(params) - {"value"}:
            raise ConfigError(f"initial.params: unknown keys {sorted(set(params) - {'value'})}")
    elif init["kind"] == "file":
        if set(params) != {"path"}:
            raise ConfigError("initial.params for kind 'file' must be exactly {path}")
        if not Path(params["path"]).is_file():
            raise ConfigError(f"initial file {params['path']} does not exist")
    return ScenarioConfig(
        raw=raw, grid=grid, model=model, D=D, dt=dt, t_end=t_end, dt_store=dt_store,
        seed=int(raw["seed"]), initial=init, mu=raw.get("mu"),
        reaction_substeps=int(raw.get("reaction_substeps", 1)), output=raw.get("output"),
        source_bytes=source_bytes,
    )


def load(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix in (".yaml", ".yml"):
            raw = yaml.safe_load(data)
        else:
            raw = json.loads(data)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return from_dict(raw, source_bytes=data)


# --------------------------------------------------------------------------
# initial data

def gaussian_bumps(grid, P, seed, n_bumps=1, amplitude=1.0, width=1.0, spread=0.0,
                   normalize_max=None, center=None):
    """Per-species sums of ``A exp(-|x - c|^2 / width^2)`` with seeded centers and amplitudes.

    Centers are uniform in the ball of radius ``spread`` around ``center``;
    amplitudes are ``amplitude * U(0.5, 1)`` except for a single bump, which
    gets ``amplitude`` exactly.
    """
    rng = np.random.default_rng(seed)
    base = np.zeros(grid.N) if center is None else np.asarray(center, dtype=float)
    coords = grid.coords()
    data = np.zeros((P,) + grid.shape)
    for i in range(P):
        for _ in range(n_bumps):
            direction = rng.normal(size=grid.N)
            direction /= np.linalg.norm(direction) or 1.0
            r = spread * rng.uniform() ** (1.0 / grid.N)
            c = base + r * direction
            amp = amplitude if n_bumps == 1 else amplitude * rng.uniform(0.5, 1.0)
            r2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
            data[i] += amp * np.exp(-r2 / width**2)
    if normalize_max is not None:
        data *= normalize_max / data.max()
    return data


def make_initial(spec, grid, P, seed, check_boundary=True):
    """Deterministic initial field from an ``initial`` config block."""
    from .entropy import m0  # deferred: entropy depends on config-free modules only

    kind = spec["kind"]
    params = dict(spec.get("params", {}))
    if kind == "constant":
        value = params.get("value", 0.0)
        vals = np.broadcast_to(np.asarray(value, dtype=float), (P,))
        data = np.ones((P,) + grid.shape) * vals.reshape((P,) + (1,) * grid.N)
        field = SpeciesField(grid, data, 0.0)
        if np.any(data < 0) or not np.all(np.isfinite(data)):
            raise ConfigError("initial data must be finite and nonnegative", reason="inadmissible_initial")
        # a constant never decays at the boundary, so the mass checks do not apply
        return field
    if kind == "gaussian_bumps":
        data = gaussian_bumps(grid, P, seed, **params)
        field = SpeciesField(grid, data, 0.0)
    elif kind == "file":
        from .rdf import read_snapshot

        field, _ = read_snapshot(params["path"])
        if field.grid != grid or field.P != P:
            raise ConfigError("initial file does not match the configured grid/species")
        field = SpeciesField(grid, field.data.copy(), 0.0)
    else:
        raise ConfigError(f"unknown initial kind {kind!r}")
    if np.any(field.data < 0) or not np.all(np.isfinite(field.data)):
        raise ConfigError("initial data must be finite and nonnegative", reason="inadmissible_initial")
    rep = m0(field)
    if not math.isfinite(rep.M0):
        raise ConfigError("initial data has infinite M0", reason="inadmissible_initial")
    if check_boundary:
        frac = boundary_mass_fraction(grid, field.data)
        if frac > BOUNDARY_MASS_TOL:
            raise ConfigError(f"initial boundary mass fraction {frac:.3g} exceeds {BOUNDARY_MASS_TOL}",
                              reason="inadmissible_initial")
    return field


def standard_config(**overrides):
    """The fixed reference scenario used by the acceptance suite."""
    raw = {
        "schema_version": SCHEMA_VERSION,
        "grid": {"N": 3, "n": 64, "L": 8.0},
        "model": {"family": "four_species_exchange", "nu": 1.5, "P": 4},
        "D": [1.0, 2.0, 0.5, 1.5],
        "dt": 2e-4,
        "t_end": 1.0,
        "dt_store": 0.05,
        "seed": 7,
        "initial": {"kind": "gaussian_bumps",
                    "params": {"n_bumps": 2, "amplitude": 2.0, "width": 1.0, "spread": 0.5}},
    }
    cfg = from_dict(raw)
    return cfg.with_changes(**overrides) if overrides else cfg
