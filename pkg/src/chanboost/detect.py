"""Multi-scale sliding-window detection with the soft cascade.

Windows live on the aggregated cell grid (stride is a whole number of
cells), features are read straight out of the channel stack through the
cascade's layout with no copying, and hits are mapped back to original
image coordinates before greedy non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .boost import BoostedCascade, bin_edges_inv_width
from .channels import PyramidSpec, build_pyramid
from .geometry import Box, overlap


@dataclass
class Detection:
    box: Box
    score: float
    scale: float = 1.0
    n_trees_evaluated: int = 0


@dataclass
class ScanConfig:
    stride: int = 4
    accept_threshold: float = 0.0
    nms_overlap: float = 0.65
    nms_denominator: str = "min"
    max_detections: int = 0  # 0 means unlimited

    def __post_init__(self):
        if not (0.0 < self.nms_overlap < 1.0):
            raise ValueError("nms_overlap must be in (0, 1)")
        if self.nms_denominator not in ("union", "min"):
            raise ValueError("nms_denominator must be 'union' or 'min'")


def window_grid(cells_w, cells_h, win_cw, win_ch, cell_stride):
    """Number of window positions along x and y on the cell grid."""
    nx = (cells_w - win_cw) // cell_stride + 1
    ny = (cells_h - win_ch) // cell_stride + 1
    return max(nx, 0), max(ny, 0)


def scan_windows(stack, cascade: BoostedCascade, cell_stride: int,
                 accept_threshold: float):
    """Evaluate the cascade at every window position of one pyramid level.

    Returns ``(wy, wx, scores, n_eval)`` arrays for the windows (top-left
    cell coordinates) whose score reaches the accept threshold.
    """
    geom = cascade.geometry
    if stack.n_channels != cascade.n_channels:
        raise ValueError(
            f"stack has {stack.n_channels} channels, cascade expects {cascade.n_channels}")
    nx, ny = window_grid(stack.cells_w, stack.cells_h, geom.win_cw, geom.win_ch,
                         cell_stride)
    empty = np.empty(0, dtype=np.int64)
    if nx == 0 or ny == 0:
        return empty, empty, np.empty(0), np.empty(0, dtype=np.int32)
    wy, wx = np.meshgrid(np.arange(ny) * cell_stride, np.arange(nx) * cell_stride,
                         indexing="ij")
    wy = wy.ravel()
    wx = wx.ravel()
    base = (wy * stack.cells_w + wx).astype(np.int64)
    feat_off = geom.feature_offsets(cascade.n_channels, stack.cells_h, stack.cells_w)
    invw = bin_edges_inv_width(cascade.vmin, cascade.vmax)
    p = cascade.trees
    scores, neval = kernels.scan_stack(
        np.ascontiguousarray(stack.data).ravel(), feat_off, cascade.vmin, invw,
        p.feature, p.thresh, p.pol, p.left, p.right, p.leaf, p.tree_off,
        cascade.alphas, cascade.reject_after, base)
    hits = np.nonzero(scores >= accept_threshold)[0]
    return wy[hits], wx[hits], scores[hits], neval[hits]


def scan_scale(stack, cascade: BoostedCascade, cfg: ScanConfig):
    """Scan one pyramid level, mapping hits to original-image model boxes."""
    geom = cascade.geometry
    if cfg.stride % geom.shrink:
        raise ValueError("stride must be a multiple of shrink")
    wy, wx, scores, neval = scan_windows(stack, cascade, cfg.stride // geom.shrink,
                                         cfg.accept_threshold)
    s = stack.scale
    out = []
    for i in range(wy.shape[0]):
        box = Box(x=(wx[i] * geom.shrink + geom.pad_w) / s,
                  y=(wy[i] * geom.shrink + geom.pad_h) / s,
                  w=geom.model_w / s, h=geom.model_h / s)
        out.append(Detection(box=box, score=float(scores[i]), scale=s,
                             n_trees_evaluated=int(neval[i])))
    return out


def nms(dets, overlap_thresh, denominator="min"):
    """Greedy suppression: keep a detection iff its overlap with every
    already-kept detection is below the threshold.

    Candidates are visited by descending score, ties by smaller x then y.
    """
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].score, dets[i].box.x, dets[i].box.y,
                                  dets[i].box.w, dets[i].box.h))
    kept: list[int] = []
    for i in order:
        ok = True
        for j in kept:
            if overlap(dets[i].box, dets[j].box, denominator) >= overlap_thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return [dets[i] for i in kept]


def detect(img, cascade: BoostedCascade, pyr_spec: PyramidSpec, cfg: ScanConfig):
    """Full-image detection: pyramid, per-level scan, NMS."""
    base_channels = (cascade.filter_bank.n_input_channels
                     if cascade.filter_bank is not None else cascade.n_channels)
    stacks = build_pyramid(img, pyr_spec, shrink=cascade.geometry.shrink,
                           n_orientations=base_channels - 4,
                           bank=cascade.filter_bank)
    dets: list[Detection] = []
    for stack in stacks:
        dets.extend(scan_scale(stack, cascade, cfg))
    dets = nms(dets, cfg.nms_overlap, cfg.nms_denominator)
    if cfg.max_detections and len(dets) > cfg.max_detections:
        dets = dets[:cfg.max_detections]
    return dets
