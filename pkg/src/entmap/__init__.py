"""Entropic estimation of optimal transport maps from samples."""

__version__ = "0.1.0"
