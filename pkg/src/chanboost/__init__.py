"""Boosted soft-cascade object detection on aggregate channel features."""

__version__ = "0.1.0"

from .geometry import Box, ModelGeometry, iou, overlap  # noqa: F401
