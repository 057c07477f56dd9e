"""Spatial QA data engine: oriented 3D boxes in, templated spatial questions out."""

__version__ = "0.1.0"
