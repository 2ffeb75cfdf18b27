"""Reaction-diffusion toolkit: solver, entropy and weak-norm diagnostics, De Giorgi ladders, rescaling."""

__version__ = "0.1.0"

from .grid import GridSpec, SpaceTimeSlab, SpeciesField  # noqa: E402,F401
from .model import FourSpeciesExchange, TwoSpeciesExchange, ZeroReaction, verify_hypotheses  # noqa: E402,F401
