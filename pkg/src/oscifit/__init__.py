"""Denoising and latent-parameter regression for decaying oscillating time series."""

__version__ = "0.1.0"
