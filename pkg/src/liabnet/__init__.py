"""Reconstruction and stress testing of partially observed liability networks."""

__version__ = "0.1.0"
