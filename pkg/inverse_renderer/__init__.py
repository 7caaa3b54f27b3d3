"""Inverse Renderer - differentiable SG-illumination rendering of SDF scenes."""

__version__ = "1.0.0"
