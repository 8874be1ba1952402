"""Dermoscopic dataset auditing, synthetic-image validation, preprocessing,
graph-cut segmentation and evaluation toolkit."""

__version__ = "0.1.0"
