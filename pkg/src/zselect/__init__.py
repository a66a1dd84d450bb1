"""Selective classification by Z-tests over repeated stochastic forward passes."""

__version__ = "0.1.0"
