"""Positive-sample augmentation: aspect standardization, flipping,
translation, scale+crop, and PCA color jitter.

Samples are declarative (image reference + box + provenance chain); pixels
only materialize when a training window is cropped. Every operator is a
pure function, and the provenance chain records exactly which operators
produced a sample, so materialization is reproducible.

Provenance entries are tuples: ``("original",)``, ``("flip",)``,
``("translate", dx, dy)``, ``("scale", fx, fy)``,
``("color", seed, sigma)``, ``("clamped",)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Box, ModelGeometry


@dataclass(frozen=True)
class PositiveSample:
    image_ref: str
    box: Box
    provenance: tuple = (("original",),)
    image_w: int = 0
    image_h: int = 0


@dataclass(frozen=True)
class ColorStats:
    """RGB-space PCA: unit eigenvector columns and descending eigenvalues."""

    eigvecs: np.ndarray
    eigvals: np.ndarray


@dataclass
class AugmentSpec:
    flip: bool = False
    ar_standardize: bool = True
    target_aspect: float = 41.0 / 100.0
    translate: tuple | None = None      # (step, max) in pixels
    scale_crop: tuple | None = None     # (factor, axes subset)
    color: tuple | None = None          # (sigma, draws)

    def __post_init__(self):
        if self.translate is not None:
            step, mx = self.translate
            if step < 1 or mx < 0:
                raise ValueError("translate requires step >= 1 and max >= 0")
        if self.scale_crop is not None:
            factor, axes = self.scale_crop
            if factor <= 0:
                raise ValueError("scale factor must be positive")
            bad = set(axes) - {"horizontal", "vertical", "both"}
            if bad:
                raise ValueError(f"unknown scale axes {sorted(bad)}")
        if self.color is not None and self.color[0] < 0:
            raise ValueError("color sigma must be >= 0")


def standardize_aspect(box: Box, target_aspect: float) -> Box:
    """Rewrite the box to the target w/h ratio about its center.

    Height and center are preserved exactly; idempotent.
    """
    w = target_aspect * box.h
    return Box(x=box.cx - w / 2.0, y=box.y, w=w, h=box.h)


def flip_sample(s: PositiveSample, image_width: float) -> PositiveSample:
    """Mirror the sample horizontally: x' = W - x - w."""
    box = Box(x=image_width - s.box.x - s.box.w, y=s.box.y, w=s.box.w, h=s.box.h)
    return replace(s, box=box, provenance=s.provenance + (("flip",),))


def translate_samples(s: PositiveSample, step: int, max_shift: int):
    """Cardinal-direction box shifts at every multiple of ``step`` up to
    ``max_shift``: 4 * floor(max/step) samples."""
    out = []
    for m in range(step, max_shift + 1, step):
        for dx, dy in ((-m, 0), (m, 0), (0, -m), (0, m)):
            box = Box(x=s.box.x + dx, y=s.box.y + dy, w=s.box.w, h=s.box.h)
            out.append(replace(s, box=box,
                               provenance=s.provenance + (("translate", dx, dy),)))
    return out


_AXIS_ORDER = ("horizontal", "vertical", "both")


def scale_crop_samples(s: PositiveSample, factor: float, axes):
    """One sample per axis mode; the window content is zoomed by the factor
    about the box center at crop time, the box itself is unchanged."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    out = []
    for axis in _AXIS_ORDER:
        if axis not in axes:
            continue
        fx = factor if axis in ("horizontal", "both") else 1.0
        fy = factor if axis in ("vertical", "both") else 1.0
        out.append(replace(s, provenance=s.provenance + (("scale", fx, fy),)))
    return out


def fit_color_stats(pixels) -> ColorStats:
    """PCA of RGB pixel values: 3x3 covariance eigendecomposition."""
    x = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    if np.unique(x, axis=0).shape[0] < 3:
        raise ValueError("need at least 3 distinct pixels")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    for i in range(3):
        j = int(np.argmax(np.abs(eigvecs[:, i])))
        if eigvecs[j, i] < 0:
            eigvecs[:, i] = -eigvecs[:, i]
    return ColorStats(eigvecs=eigvecs, eigvals=eigvals)


def color_shift(stats: ColorStats, sigma: float, seed: int) -> np.ndarray:
    """The RGB shift added by one jitter draw: P @ (alpha * lambda)."""
    alpha = np.random.default_rng(seed).normal(0.0, sigma, size=3)
    return stats.eigvecs @ (alpha * stats.eigvals)


def color_jitter(img, stats: ColorStats, sigma: float, seed: int):
    """Add one PCA color shift to every pixel, clamped to [0, 255]."""
    arr = np.asarray(img)
    shift = color_shift(stats, sigma, seed)
    out = np.clip(arr.astype(np.float64) + shift, 0.0, 255.0)
    if arr.dtype == np.uint8:
        return np.rint(out).astype(np.uint8)
    return out


def expand_dataset(samples, spec: AugmentSpec, seed: int = 0):
    """Apply the configured operator pipeline to every sample.

    Order: aspect standardization, then translation, then scale+crop, then
    flip, then color. Originals are always kept, so output size is the
    product of the per-operator counts. Input samples are never mutated.
    """
    current = list(samples)
    if spec.ar_standardize:
        current = [replace(s, box=standardize_aspect(s.box, spec.target_aspect))
                   for s in current]
    if spec.translate is not None:
        step, mx = spec.translate
        current = [v for s in current
                   for v in [s] + translate_samples(s, step, mx)]
    if spec.scale_crop is not None:
        factor, axes = spec.scale_crop
        current = [v for s in current
                   for v in [s] + scale_crop_samples(s, factor, axes)]
    if spec.flip:
        flipped = []
        for s in current:
            if s.image_w <= 0:
                raise ValueError("flip requires samples with a known image width")
            flipped.append(flip_sample(s, s.image_w))
        current = [v for pair in zip(current, flipped) for v in pair]
    if spec.color is not None:
        sigma, draws = spec.color
        out = []
        for i, s in enumerate(current):
            out.append(s)
            for d in range(draws):
                entry = ("color", seed * 1000003 + i * 131 + d, float(sigma))
                out.append(replace(s, provenance=s.provenance + (entry,)))
        current = out
    return current


def _sample_rect(img, cx, cy, rect_w, rect_h, out_h, out_w):
    """Bilinear crop of a centered rectangle, replicating beyond borders."""
    h, w = img.shape[:2]
    xs = cx + (np.arange(out_w) + 0.5 - out_w / 2.0) * (rect_w / out_w)
    ys = cy + (np.arange(out_h) + 0.5 - out_h / 2.0) * (rect_h / out_h)
    clamped = bool(xs[0] < -0.5 or ys[0] < -0.5
                   or xs[-1] > w - 0.5 or ys[-1] > h - 0.5)
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    r0 = img[y0]
    r1 = img[y1]
    top = r0[:, x0] * (1.0 - fx) + r0[:, x1] * fx
    bot = r1[:, x0] * (1.0 - fx) + r1[:, x1] * fx
    return top * (1.0 - fy) + bot * fy, clamped


def materialize_window(image, sample: PositiveSample, geom: ModelGeometry,
                       color_stats: ColorStats | None = None):
    """Extract the padded training crop for a sample.

    The crop covers the model window plus the margin ring, scaled so the
    sample box spans exactly ``model_w x model_h`` window pixels. Returns
    ``(crop, clamped)`` where crop is float64 (crop_h, crop_w, 3) RGB and
    ``clamped`` flags source rectangles that extended past the image.
    """
    img = np.asarray(image, dtype=np.float64)
    fx = fy = 1.0
    n_flips = 0
    shifts = []
    for entry in sample.provenance:
        tag = entry[0]
        if tag == "scale":
            fx *= entry[1]
            fy *= entry[2]
        elif tag == "flip":
            n_flips += 1
        elif tag == "color":
            if color_stats is None:
                raise ValueError("sample has color jitter but no ColorStats given")
            shifts.append(color_shift(color_stats, entry[2], entry[1]))
    box = sample.box
    if n_flips % 2:
        box = Box(x=img.shape[1] - box.x - box.w, y=box.y, w=box.w, h=box.h)
    unit = box.h / geom.model_h
    crop, clamped = _sample_rect(img, box.cx, box.cy,
                                 geom.crop_w * unit / fx,
                                 geom.crop_h * unit / fy,
                                 geom.crop_h, geom.crop_w)
    if n_flips % 2:
        crop = crop[:, ::-1]
    for shift in shifts:
        crop = np.clip(crop + shift, 0.0, 255.0)
    return crop, clamped
