"""End-to-end cascade training and batch detection.

Training runs the staged schedule: extract augmented positive windows
once, then per stage (re)fill the negative pool (uniform random windows
first, hard negatives mined with the previous stage's cascade after),
rebuild the quantized matrix from the current pool, boost a fresh model of
the stage size, and calibrate rejection thresholds on the positives.

Everything is a deterministic function of the manifests, the schedule
(including its seed), and the augmentation spec; worker count only
parallelizes per-image work and never changes results.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import boost
from .augment import AugmentSpec, PositiveSample, expand_dataset, fit_color_stats, \
    materialize_window
from .boost import BoostedCascade, TrainSchedule, pack_trees, quantize
from .channels import PyramidSpec, apply_filter_bank, build_pyramid, \
    compute_channel_stack, pyramid_scales
from .context import rescore
from .data import DatasetManifest, load_image
from .detect import detect as detect_image
from .detect import scan_windows, window_grid
from .errors import TrainError
from .geometry import Box, ModelGeometry, iou

log = logging.getLogger("chanboost")

_WORKER_STATE = None


def _init_worker(payload):
    global _WORKER_STATE
    _WORKER_STATE = payload


def _map_images(fn, tasks, workers, payload):
    """Run fn over tasks, optionally across processes; results keep task order."""
    global _WORKER_STATE
    if workers <= 1 or len(tasks) <= 1:
        _WORKER_STATE = payload
        try:
            return [fn(t) for t in tasks]
        finally:
            _WORKER_STATE = None
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(payload,)) as ex:
        chunk = max(1, len(tasks) // (workers * 4))
        return list(ex.map(fn, tasks, chunksize=chunk))


def window_features_from_crop(crop, geom: ModelGeometry, n_orientations, bank):
    """Channel features of one training crop, margin trimmed, as float32."""
    stack = compute_channel_stack(crop, shrink=geom.shrink,
                                  n_orientations=n_orientations)
    if bank is not None:
        stack = apply_filter_bank(stack, bank)
    m = geom.margin_cells
    cells = stack.data[:, m:m + geom.win_ch, m:m + geom.win_cw]
    return np.ascontiguousarray(cells).ravel().astype(np.float32)


def window_features_from_stack(stack, wy, wx, geom: ModelGeometry):
    """Features of the window at cell (wy, wx) of a pyramid level."""
    cells = stack.data[:, wy:wy + geom.win_ch, wx:wx + geom.win_cw]
    return np.ascontiguousarray(cells).ravel().astype(np.float32)


def positive_samples_from_manifest(manifest: DatasetManifest, max_occlusion=1.0):
    """One sample per annotated, non-ignored, lightly-occluded box."""
    samples = []
    for e in manifest.entries:
        for g in e.annotations:
            if g.ignore or g.occlusion_fraction > max_occlusion:
                continue
            samples.append(PositiveSample(image_ref=e.image_path, box=g.box))
    return samples


def _color_stats_for(manifest, spec: AugmentSpec, max_images=16):
    if spec.color is None:
        return None
    pixels = []
    for e in manifest.entries[:max_images]:
        img = load_image(manifest.resolve(e))
        pixels.append(img.reshape(-1, 3)[::37])
    return fit_color_stats(np.concatenate(pixels, axis=0))


def _extract_positive_task(task):
    path, samples = task
    geom, n_orientations, bank, color_stats = _WORKER_STATE
    img = load_image(path).astype(np.float64)
    rows = []
    n_clamped = 0
    for s in samples:
        crop, clamped = materialize_window(img, s, geom, color_stats)
        n_clamped += clamped
        rows.append(window_features_from_crop(crop, geom, n_orientations, bank))
    return rows, n_clamped


def extract_positive_features(manifest: DatasetManifest, aug: AugmentSpec,
                              geom: ModelGeometry, n_orientations=6, bank=None,
                              max_occlusion=1.0, seed=0, workers=1):
    """Materialize every augmented positive window into a feature matrix."""
    samples = positive_samples_from_manifest(manifest, max_occlusion)
    if not samples:
        raise TrainError("manifest contains no usable positive boxes")
    sizes = {}
    if aug.flip:
        for e in manifest.entries:
            with Image.open(manifest.resolve(e)) as im:
                sizes[e.image_path] = im.size
        samples = [PositiveSample(s.image_ref, s.box, s.provenance,
                                  image_w=sizes[s.image_ref][0],
                                  image_h=sizes[s.image_ref][1]) for s in samples]
    expanded = expand_dataset(samples, aug, seed=seed)
    color_stats = _color_stats_for(manifest, aug)
    by_image: dict[str, list] = {}
    for s in expanded:
        by_image.setdefault(s.image_ref, []).append(s)
    tasks = [(manifest.resolve(e), by_image[e.image_path])
             for e in manifest.entries if e.image_path in by_image]
    results = _map_images(_extract_positive_task, tasks, workers,
                          (geom, n_orientations, bank, color_stats))
    rows = [r for chunk, _ in results for r in chunk]
    n_clamped = sum(c for _, c in results)
    if n_clamped:
        log.info("positive extraction: %d window crops clamped at image borders",
                 n_clamped)
    return np.stack(rows), len(samples)


class NegativePool:
    """Hard-negative feature pool capped at N samples.

    When new negatives would overflow the cap, the lowest-score previous
    entries are evicted first; bootstrap (random) negatives carry -inf
    scores so they always leave before mined ones.
    """

    def __init__(self, cap: int, n_features: int):
        self.cap = cap
        self.features = np.empty((0, n_features), dtype=np.float32)
        self.scores = np.empty(0, dtype=np.float64)

    def __len__(self):
        return self.features.shape[0]

    def add(self, features, scores):
        if len(features) == 0:
            return
        overflow = len(self) + len(features) - self.cap
        if overflow > 0:
            keep = np.argsort(self.scores, kind="stable")[overflow:]
            keep.sort()
            self.features = self.features[keep]
            self.scores = self.scores[keep]
        self.features = np.concatenate([self.features, features], axis=0)
        self.scores = np.concatenate([self.scores, scores])
        if len(self) > self.cap:
            raise AssertionError("negative pool exceeded its cap")


def _window_box(scale, wy, wx, geom: ModelGeometry):
    """Full padded window in original-image coordinates."""
    return Box(x=(wx * geom.shrink) / scale, y=(wy * geom.shrink) / scale,
               w=geom.window_w / scale, h=geom.window_h / scale)


def _overlaps_annotation(win_box, annotations, thresh=0.5):
    return any(iou(win_box, g.box) >= thresh for g in annotations)


def negative_entries(manifest: DatasetManifest):
    """Entries with no non-ignored annotations (the mining source)."""
    return [e for e in manifest.entries
            if not any(not g.ignore for g in e.annotations)]


def _random_negative_task(task):
    path, picks = task
    geom, n_orientations, bank, pyr_spec = _WORKER_STATE
    img = load_image(path)
    stacks = build_pyramid(img, pyr_spec, shrink=geom.shrink,
                           n_orientations=n_orientations, bank=bank)
    rows = []
    for level, wy, wx in picks:
        rows.append(window_features_from_stack(stacks[level], wy, wx, geom))
    return rows


def sample_random_negatives(manifest, entries, quota, geom, pyr_spec,
                            n_orientations, bank, rng, workers=1):
    """Uniform-random windows from negative images, avoiding annotations."""
    per_image = -(-quota // max(len(entries), 1))
    tasks = []
    total = 0
    for e in entries:
        if total >= quota:
            break
        with Image.open(manifest.resolve(e)) as im:
            w, h = im.size
        scales = pyramid_scales(w, h, pyr_spec)
        grids = []
        for s in scales:
            cw = -(-max(int(round(w * s)), geom.shrink) // geom.shrink)
            ch = -(-max(int(round(h * s)), geom.shrink) // geom.shrink)
            nx, ny = window_grid(cw, ch, geom.win_cw, geom.win_ch, 1)
            grids.append((nx, ny))
        usable = [i for i, (nx, ny) in enumerate(grids) if nx > 0 and ny > 0]
        if not usable:
            continue
        picks = []
        want = min(per_image, quota - total)
        for _ in range(want):
            for _try in range(20):
                level = usable[int(rng.integers(len(usable)))]
                nx, ny = grids[level]
                wy = int(rng.integers(ny))
                wx = int(rng.integers(nx))
                box = _window_box(scales[level], wy, wx, geom)
                if not _overlaps_annotation(box, e.annotations):
                    picks.append((level, wy, wx))
                    break
        if picks:
            tasks.append((manifest.resolve(e), picks))
            total += len(picks)
    results = _map_images(_random_negative_task, tasks, workers,
                          (geom, n_orientations, bank, pyr_spec))
    rows = [r for chunk in results for r in chunk]
    if not rows:
        return np.empty((0, 0), np.float32), np.empty(0)
    feats = np.stack(rows)
    return feats, np.full(len(feats), -np.inf)


def _mine_task(task):
    path, annotations, cap = task
    cascade, pyr_spec, n_orientations, threshold, geom = _WORKER_STATE
    img = load_image(path)
    stacks = build_pyramid(img, pyr_spec, shrink=geom.shrink,
                           n_orientations=n_orientations,
                           bank=cascade.filter_bank)
    cands = []  # (score, level, wy, wx)
    for level, stack in enumerate(stacks):
        wy, wx, scores, _ = scan_windows(stack, cascade, 1, threshold)
        for i in range(wy.shape[0]):
            if _overlaps_annotation(_window_box(stack.scale, wy[i], wx[i], geom),
                                    annotations):
                continue
            cands.append((float(scores[i]), level, int(wy[i]), int(wx[i])))
    cands.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))
    cands = cands[:cap]
    feats = [window_features_from_stack(stacks[c[1]], c[2], c[3], geom)
             for c in cands]
    return [(c[0], f) for c, f in zip(cands, feats)]


def mine_hard_negatives(cascade: BoostedCascade, manifest, entries, quota,
                        pyr_spec, n_orientations, threshold=0.0, workers=1):
    """Top-scoring false-positive windows across the negative images.

    Every window above the accept threshold that does not overlap an
    annotation is a candidate; the global top ``quota`` by score win. The
    per-image candidate count is capped (well above its fair share of the
    quota) to bound memory.
    """
    geom = cascade.geometry
    cap = max(64, -(-4 * quota // max(len(entries), 1)))
    tasks = [(manifest.resolve(e), e.annotations, cap) for e in entries]
    results = _map_images(_mine_task, tasks, workers,
                          (cascade, pyr_spec, n_orientations, threshold, geom))
    merged = []
    for img_idx, cands in enumerate(results):
        for rank, (score, feat) in enumerate(cands):
            merged.append((score, img_idx, rank, feat))
    merged.sort(key=lambda c: (-c[0], c[1], c[2]))
    merged = merged[:quota]
    if not merged:
        return np.empty((0, cascade.n_features), np.float32), np.empty(0)
    feats = np.stack([m[3] for m in merged])
    scores = np.array([m[0] for m in merged])
    return feats, scores


def _boost_stage(pos_feats, neg_feats, schedule: TrainSchedule, n_trees,
                 exhaustive_first, rng):
    """Train one fresh boosted model of ``n_trees`` trees on the pool."""
    x = np.concatenate([pos_feats, neg_feats], axis=0).astype(np.float64)
    labels = np.concatenate([np.ones(len(pos_feats), np.int8),
                             -np.ones(len(neg_feats), np.int8)])
    q = quantize(x, labels)
    n_features = q.n_features
    n_sub = max(int(np.ceil(schedule.feature_fraction * n_features)), 1)
    roots = []
    alphas = []
    scores = np.zeros(q.n_samples)
    losses = []
    for t in range(n_trees):
        if t < exhaustive_first:
            cand = np.arange(n_features, dtype=np.int64)
        else:
            cand = np.sort(rng.choice(n_features, size=n_sub, replace=False))
        tree = boost.train_tree(q, schedule.tree_depth, cand)
        packed = pack_trees([tree])
        pred = boost.apply_packed_tree(packed, 0, q.bins)
        alpha, new_w = boost._round_from_pred(q, pred)
        q.weights = new_w
        roots.append(tree)
        alphas.append(alpha)
        scores += alpha * pred
        losses.append(boost.exp_loss(q.labels, scores))
    return q, roots, np.asarray(alphas), losses


def train_cascade(manifest: DatasetManifest, schedule: TrainSchedule,
                  aug: AugmentSpec, geom: ModelGeometry, pyr_spec: PyramidSpec,
                  n_orientations=6, bank=None, mining_threshold=0.0,
                  target_keep=1.0, calibration_margin=1e-6, max_occlusion=1.0,
                  workers=1) -> BoostedCascade:
    """The staged training pipeline; deterministic in (data, schedule)."""
    rng = np.random.default_rng(schedule.rng_seed)
    t0 = time.time()
    pos_feats, n_pos_raw = extract_positive_features(
        manifest, aug, geom, n_orientations, bank,
        max_occlusion=max_occlusion, seed=schedule.rng_seed, workers=workers)
    log.info("positives: %d raw boxes -> %d windows (%.1fs)",
             n_pos_raw, len(pos_feats), time.time() - t0)
    neg_entries_ = negative_entries(manifest)
    if not neg_entries_:
        raise TrainError("manifest has no images without positives to mine from")
    pool = NegativePool(schedule.n_neg_cap, pos_feats.shape[1])
    quota = schedule.n_neg_cap // 2
    cascade = None
    stage_logs = []
    n_stages = len(schedule.stage_sizes)
    for s, n_trees in enumerate(schedule.stage_sizes):
        t0 = time.time()
        if cascade is None:
            feats, scores = sample_random_negatives(
                manifest, neg_entries_, quota, geom, pyr_spec,
                n_orientations, bank, rng, workers)
        else:
            feats, scores = mine_hard_negatives(
                cascade, manifest, neg_entries_, quota, pyr_spec,
                n_orientations, mining_threshold, workers)
            if len(feats) == 0:
                log.warning("stage %d: no hard negatives found, pool unchanged", s)
        pool.add(feats, scores)
        if len(pool) == 0:
            raise TrainError("negative pool is empty")
        mine_t = time.time() - t0
        t0 = time.time()
        exhaustive = schedule.exhaustive_first if s == n_stages - 1 else 0
        q, roots, alphas, losses = _boost_stage(
            pos_feats, pool.features, schedule, n_trees, exhaustive, rng)
        packed = pack_trees(roots)
        cascade = BoostedCascade(
            trees=packed, alphas=alphas,
            reject_after=np.full(n_trees, -np.inf),
            geometry=geom, n_channels=pos_feats.shape[1] // (geom.win_cw * geom.win_ch),
            vmin=q.vmin, vmax=q.vmax, filter_bank=bank,
            meta={"schedule": {
                "stage_sizes": list(schedule.stage_sizes),
                "n_neg_cap": schedule.n_neg_cap,
                "tree_depth": schedule.tree_depth,
                "feature_fraction": schedule.feature_fraction,
                "exhaustive_first": schedule.exhaustive_first,
                "rng_seed": schedule.rng_seed},
                "n_orientations": n_orientations})
        pos_bins = boost.quantize_with_edges(pos_feats.astype(np.float64),
                                             q.vmin, q.vmax)
        cascade.reject_after = boost.calibrate_reject_thresholds(
            cascade, pos_bins, target_keep, calibration_margin)
        stage_logs.append({
            "stage": s, "n_trees": n_trees, "n_pos": int(len(pos_feats)),
            "n_neg": int(len(pool)), "final_loss": losses[-1],
            "mining_s": round(mine_t, 2), "boosting_s": round(time.time() - t0, 2)})
        log.info("stage %d: %d trees, %d neg in pool, loss %.4g "
                 "(mine %.1fs, boost %.1fs)", s, n_trees, len(pool), losses[-1],
                 mine_t, time.time() - t0)
    cascade.meta["stages"] = stage_logs
    return cascade


def _detect_task(path):
    cascade, pyr_spec, cfg, rescorer = _WORKER_STATE
    img = load_image(path)
    dets = detect_image(img, cascade, pyr_spec, cfg)
    if rescorer is not None:
        dets = rescore(dets, rescorer, img.shape[1], img.shape[0])
        dets.sort(key=lambda d: (-d.score, d.box.x, d.box.y))
    return dets


def detect_manifest(manifest: DatasetManifest, cascade: BoostedCascade,
                    pyr_spec: PyramidSpec, cfg: ScanConfig, workers=1,
                    rescorer=None):
    """Detection over every manifest image.

    Returns (ordered dict image_path -> detections, elapsed seconds).
    """
    paths = [manifest.resolve(e) for e in manifest.entries]
    t0 = time.time()
    results = _map_images(_detect_task, paths, workers,
                          (cascade, pyr_spec, cfg, rescorer))
    elapsed = time.time() - t0
    return {e.image_path: dets for e, dets in zip(manifest.entries, results)}, elapsed
