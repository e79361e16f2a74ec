"""Diffusion-reconstruction noise quantification for 1-D physiological signals."""

__version__ = "0.1.0"
