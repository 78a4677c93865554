"""Fractional porous medium flows on radial model manifolds."""

__version__ = "0.1.0"
