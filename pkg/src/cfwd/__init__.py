"""Simulation and Monte Carlo verification of sticky-reflected particle systems."""

__version__ = "0.1.0"
