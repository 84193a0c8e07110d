"""Separable temporal network models with time-varying coefficients."""

__version__ = "0.1.0"
