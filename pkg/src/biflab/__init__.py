"""Numerical bifurcation theory for polynomial-like families."""

__version__ = "0.1.0"
