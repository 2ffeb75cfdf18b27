"""Small report containers shared by the property checks."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


@dataclass
class PropertyReport:
    """Outcome of checking one inequality on concrete data."""

    name: str
    passed: bool
    lhs: float = float("nan")
    rhs: float = float("nan")
    details: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    def to_dict(self):
        return _plain(asdict(self))


def ndjson_line(obj):
    return json.dumps(_plain(obj), separators=(",", ":")) + "\n"
