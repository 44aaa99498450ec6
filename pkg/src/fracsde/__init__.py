"""Numerical toolkit for backward doubly stochastic equations driven by
Brownian and fractional Brownian motion (Hurst index in (1/2, 1))."""

__version__ = "0.1.0"
