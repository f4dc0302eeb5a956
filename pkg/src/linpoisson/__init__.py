"""Estimation of linearly parameterized Poisson intensities."""

__version__ = "0.1.0"
