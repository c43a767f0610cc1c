"""Desk-scale optoacoustic tomography: forward model, DAS, conditional diffusion reconstruction."""

__version__ = "0.1.0"
