"""Boxes, overlap measures, and the model window geometry.

A box is axis-aligned, stored as top-left corner plus size in pixels.
Coordinates are floats; fractional positions are meaningful (aspect
standardization and scale mapping both produce sub-pixel boxes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def overlap(a: Box, b: Box, denominator: str = "union") -> float:
    """Overlap ratio with a configurable denominator.

    ``union`` gives the PASCAL IoU; ``min`` divides by the smaller box
    area (the greedier suppression convention).
    """
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    if denominator == "union":
        return inter / (a.area + b.area - inter)
    if denominator == "min":
        return inter / min(a.area, b.area)
    raise ValueError(f"unknown overlap denominator {denominator!r}")


@dataclass(frozen=True)
class ModelGeometry:
    """Pixel geometry of the detector window.

    The object model occupies ``model_w x model_h`` pixels centered in a
    padded ``window_w x window_h`` sliding window. Channels are aggregated
    into ``shrink x shrink`` cells, so the window spans
    ``window_w/shrink x window_h/shrink`` cells. Training crops carry an
    extra ``margin_cells`` ring of context so that smoothing and filter
    banks see real neighbors instead of replicated padding; the margin is
    trimmed after channel computation.
    """

    model_w: int = 41
    model_h: int = 100
    window_w: int = 64
    window_h: int = 128
    shrink: int = 4
    margin_cells: int = 4

    def __post_init__(self):
        if self.window_w % self.shrink or self.window_h % self.shrink:
            raise ValueError("window size must be a multiple of shrink")

    @property
    def win_cw(self) -> int:
        return self.window_w // self.shrink

    @property
    def win_ch(self) -> int:
        return self.window_h // self.shrink

    @property
    def pad_w(self) -> float:
        return (self.window_w - self.model_w) / 2.0

    @property
    def pad_h(self) -> float:
        return (self.window_h - self.model_h) / 2.0

    @property
    def crop_w(self) -> int:
        return self.window_w + 2 * self.margin_cells * self.shrink

    @property
    def crop_h(self) -> int:
        return self.window_h + 2 * self.margin_cells * self.shrink

    def n_features(self, n_channels: int) -> int:
        return n_channels * self.win_cw * self.win_ch

    def feature_offsets(self, n_channels: int, cells_h: int, cells_w: int) -> np.ndarray:
        """Flat cell-grid offsets of every window feature.

        Feature ``k`` addresses channel ``k // (win_ch*win_cw)`` at cell
        ``(dy, dx)`` inside the window; the returned offsets are relative
        to the window's top-left cell in a ``(C, cells_h, cells_w)``
        C-ordered stack.
        """
        k = np.arange(self.n_features(n_channels))
        per = self.win_ch * self.win_cw
        ch = k // per
        rem = k % per
        dy = rem // self.win_cw
        dx = rem % self.win_cw
        return (ch * cells_h * cells_w + dy * cells_w + dx).astype(np.int64)
