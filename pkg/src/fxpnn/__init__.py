"""Quantised neural-network receiver with fixed-point inference."""

__version__ = "0.1.0"
