"""Numerical harmonic analysis on GL(2, R) and related homogeneous spaces."""

__version__ = "0.1.0"
