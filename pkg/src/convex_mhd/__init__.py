"""Convex integration toolkit for hyperdissipative Hall-MHD on the 3-torus."""

__version__ = "0.1.0"
