"""Adaptive-truncation sequential Monte Carlo for nonparametric mixtures."""

__version__ = "0.1.0"
