"""Simulation and verification tools for mean-field jump diffusions."""

__version__ = "0.1.0"
