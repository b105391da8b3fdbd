"""Numerical laboratory for the low Mach number limit of compressible elastodynamics."""

__version__ = "0.1.0"
