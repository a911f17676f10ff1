"""Meshless quasi-conformal geometry on point clouds."""

__version__ = "0.1.0"
