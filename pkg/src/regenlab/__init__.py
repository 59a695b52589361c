"""Simulation and exact oracles for compositions derived from transformed subordinators."""

from .levy import LevyModel, SlowlyVarying

__version__ = "0.1.0"

__all__ = ["LevyModel", "SlowlyVarying", "__version__"]
