"""Importance weighting for subpopulation shift."""

__version__ = "0.1.0"
