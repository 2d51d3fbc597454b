"""Continuum observer for large-scale 2x2 hyperbolic PDE networks driven by a harmonic ODE."""

__version__ = "0.1.0"
