"""Detection evaluation: greedy matching with ignore regions, FPPI/miss
curves, log-average miss rate, TPR at a false-positive budget, and average
precision.

Ground truth failing the active size/occlusion filter becomes ignore
regions: detections landing on them count neither as hits nor as false
positives, and an undetected ignore region is not a miss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, iou

TP, FP, IGNORE = "tp", "fp", "ignore"
MATCHED, MISSED = "matched", "missed"


@dataclass
class GtBox:
    box: Box
    ignore: bool = False
    occlusion_fraction: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.occlusion_fraction <= 1.0):
            raise ValueError("occlusion_fraction must be in [0, 1]")

    @property
    def height(self) -> float:
        return self.box.h


@dataclass
class EvalFilter:
    name: str = "reasonable"
    min_height: float = 50.0
    max_occlusion: float = 1.0

    def __post_init__(self):
        if self.min_height < 0:
            raise ValueError("min_height must be >= 0")


def match_image(dets, gts, filt: EvalFilter, iou_thresh: float = 0.5,
                standardize_gt_aspect: float | None = None):
    """Label detections TP/FP/ignore and ground truth matched/missed/ignore.

    Detections are processed by descending score (ties by smaller x then
    y). Each detection takes the highest-IoU unmatched non-ignore GT at or
    above the threshold; failing that it is absorbed by any ignore region
    it overlaps (those may absorb many detections); otherwise it is a
    false positive. Returned label lists align with the input orders.
    """
    boxes = []
    for g in gts:
        b = g.box
        if standardize_gt_aspect is not None:
            w = standardize_gt_aspect * b.h
            b = Box(x=b.cx - w / 2.0, y=b.y, w=w, h=b.h)
        boxes.append(b)
    gt_ignore = [g.ignore or g.box.h < filt.min_height
                 or g.occlusion_fraction > filt.max_occlusion for g in gts]
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].score, dets[i].box.x, dets[i].box.y))
    det_labels = [FP] * len(dets)
    gt_matched = [False] * len(gts)
    for i in order:
        d = dets[i].box
        best_g, best_o = -1, 0.0
        for g, b in enumerate(boxes):
            if gt_ignore[g] or gt_matched[g]:
                continue
            o = iou(d, b)
            if o >= iou_thresh and o > best_o:
                best_g, best_o = g, o
        if best_g >= 0:
            det_labels[i] = TP
            gt_matched[best_g] = True
            continue
        for g, b in enumerate(boxes):
            if gt_ignore[g] and iou(d, b) >= iou_thresh:
                det_labels[i] = IGNORE
                break
    gt_labels = [IGNORE if gt_ignore[g] else (MATCHED if gt_matched[g] else MISSED)
                 for g in range(len(gts))]
    return det_labels, gt_labels


@dataclass
class Curve:
    """FPPI / miss-rate staircase, one point per distinct threshold,
    thresholds descending (fppi non-decreasing)."""

    thresh: np.ndarray
    fppi: np.ndarray
    miss: np.ndarray
    fp: np.ndarray
    n_images: int
    n_gt: int


def curve(det_scores, det_labels, n_gt: int, n_images: int) -> Curve:
    """Sweep a threshold over every distinct counted detection score."""
    if n_images < 1:
        raise ValueError("need at least one image")
    if n_gt == 0:
        raise ValueError("nothing to evaluate")
    scores = np.asarray(det_scores, dtype=np.float64)
    labels = np.asarray(det_labels)
    counted = labels != IGNORE
    scores = scores[counted]
    is_tp = labels[counted] == TP
    if scores.size == 0:
        return Curve(thresh=np.array([np.inf]), fppi=np.array([0.0]),
                     miss=np.array([1.0]), fp=np.array([0], dtype=np.int64),
                     n_images=n_images, n_gt=n_gt)
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    is_tp = is_tp[order]
    cum_tp = np.cumsum(is_tp)
    cum_fp = np.cumsum(~is_tp)
    last = np.nonzero(np.diff(scores, append=-np.inf) != 0)[0]
    return Curve(thresh=scores[last],
                 fppi=cum_fp[last] / n_images,
                 miss=1.0 - cum_tp[last] / n_gt,
                 fp=cum_fp[last].astype(np.int64),
                 n_images=n_images, n_gt=n_gt)


def log_average_miss_rate(c: Curve, fppi_lo: float = 1e-2, fppi_hi: float = 1.0,
                          n_points: int = 9) -> float:
    """Geometric mean of miss rates at log-uniform FPPI references,
    reported as a percentage.

    At each reference the step function is sampled at the point with the
    largest fppi at or below it (the leftmost point if none); miss rates
    are clamped at 1e-10 before the logs.
    """
    refs = np.power(10.0, np.linspace(np.log10(fppi_lo), np.log10(fppi_hi),
                                      n_points))
    samples = np.empty(n_points)
    for i, r in enumerate(refs):
        below = np.nonzero(c.fppi <= r)[0]
        samples[i] = c.miss[below[-1]] if below.size else c.miss[0]
    return float(np.exp(np.mean(np.log(np.maximum(samples, 1e-10)))) * 100.0)


def tpr_at_fp(c: Curve, fp_budget: int) -> float:
    """True positive rate at the lowest threshold whose total false
    positive count stays within the budget."""
    within = np.nonzero(c.fp <= fp_budget)[0]
    if within.size == 0:
        return 0.0
    return float(1.0 - c.miss[within[-1]])


def average_precision(det_scores, det_labels, n_gt: int) -> float:
    """Area under the precision-recall curve with the every-point
    interpolation (precision envelope), detections ranked by descending
    score with stable input order on ties."""
    if n_gt < 1:
        raise ValueError("nothing to evaluate")
    scores = np.asarray(det_scores, dtype=np.float64)
    labels = np.asarray(det_labels)
    counted = labels != IGNORE
    scores = scores[counted]
    is_tp = labels[counted] == TP
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    is_tp = is_tp[order]
    cum_tp = np.cumsum(is_tp)
    prec = cum_tp / np.arange(1, is_tp.size + 1)
    envelope = np.maximum.accumulate(prec[::-1])[::-1]
    recall = cum_tp / n_gt
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))
