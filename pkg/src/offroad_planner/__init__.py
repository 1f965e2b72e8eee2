"""Terrain-aware off-road motion planning with demonstration-adapted cost weights."""

__version__ = "0.1.0"
