"""Hierarchical diffusion-based generation of human-scene interaction motion."""

__version__ = "0.1.0"
