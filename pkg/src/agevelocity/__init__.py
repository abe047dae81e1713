"""Longitudinal biological-age pipeline."""

__version__ = "0.1.0"
