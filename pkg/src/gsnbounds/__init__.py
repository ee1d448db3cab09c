"""Distortion bounds for dense Gaussian sensor networks."""

__version__ = "0.1.0"
