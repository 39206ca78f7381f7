"""Collision-induced spin-noise simulation and analysis for alkali vapors."""

__version__ = "0.1.0"
