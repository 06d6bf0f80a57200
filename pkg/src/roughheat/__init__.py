"""Spectral Galerkin solvers for the heat equation driven by a rough (fractional) signal."""

__version__ = "0.1.0"
