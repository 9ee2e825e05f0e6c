"""Finite-rate-of-innovation reconstruction: classical, unfolded and encoder-decoder methods."""

__version__ = "0.1.0"
