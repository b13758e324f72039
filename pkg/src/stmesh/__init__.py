"""Temporally smooth mesh extraction over a spacetime binary-octree."""

__version__ = "0.1.0"
