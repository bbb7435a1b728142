"""Soft truncation for score-based diffusion models on Gaussian-mixture data."""

__version__ = "0.1.0"
