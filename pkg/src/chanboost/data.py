"""Dataset ingestion and generation.

Manifests are JSON-lines files: one object per image with the schema

    {"image": "images/00000.png", "video": "v0", "frame": 12,
     "annotations": [{"x": 10, "y": 20, "w": 41, "h": 100,
                      "ignore": false, "occlusion": 0.0}]}

``video``/``frame`` are optional (frame subsampling needs them),
``ignore`` defaults to false and ``occlusion`` to 0. Image paths are
resolved relative to the manifest file.

The synthetic generator renders banded rectangles of fixed aspect ratio on
noisy gray backgrounds, with exact ground-truth boxes, optional unannotated
distractor shapes, and optional annotation jitter. It is fully determined
by its seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .errors import DataError
from .evaluation import GtBox
from .geometry import Box, overlap


@dataclass
class ManifestEntry:
    image_path: str
    annotations: list = field(default_factory=list)
    video_id: str | None = None
    frame_index: int | None = None


@dataclass
class DatasetManifest:
    entries: list
    base_dir: str = "."

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> str:
        return os.path.normpath(os.path.join(self.base_dir, entry.image_path))


def _gt_from_dict(d, lineno):
    try:
        box = Box(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]))
        return GtBox(box=box, ignore=bool(d.get("ignore", False)),
                     occlusion_fraction=float(d.get("occlusion", 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"line {lineno}: bad annotation: {e}") from e


def load_manifest(path) -> DatasetManifest:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON: {e}") from e
            if "image" not in rec:
                raise DataError(f"line {lineno}: missing 'image' field")
            img = rec["image"]
            if img in seen:
                raise DataError(f"line {lineno}: duplicate image path {img!r}")
            seen.add(img)
            frame = rec.get("frame")
            entries.append(ManifestEntry(
                image_path=img,
                annotations=[_gt_from_dict(a, lineno) for a in rec.get("annotations", [])],
                video_id=rec.get("video"),
                frame_index=None if frame is None else int(frame)))
    return DatasetManifest(entries=entries, base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: DatasetManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            rec = {"image": e.image_path}
            if e.video_id is not None:
                rec["video"] = e.video_id
            if e.frame_index is not None:
                rec["frame"] = e.frame_index
            rec["annotations"] = [
                {"x": g.box.x, "y": g.box.y, "w": g.box.w, "h": g.box.h,
                 "ignore": g.ignore, "occlusion": g.occlusion_fraction}
                for g in e.annotations]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def subsample_frames(manifest: DatasetManifest, every_kth: int) -> DatasetManifest:
    """Keep entries whose frame index is a multiple of ``every_kth``."""
    if every_kth < 1:
        raise ValueError("every_kth must be >= 1")
    kept = []
    for e in manifest.entries:
        if e.frame_index is None:
            raise DataError(f"entry {e.image_path!r} has no frame index")
        if e.frame_index % every_kth == 0:
            kept.append(e)
    return DatasetManifest(entries=kept, base_dir=manifest.base_dir)


def filter_occlusion(boxes, max_occlusion: float):
    """Retain ground-truth boxes occluded at most ``max_occlusion``."""
    return [g for g in boxes if g.occlusion_fraction <= max_occlusion]


def load_image(path) -> np.ndarray:
    """Read an image file as (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


@dataclass
class SynthSpec:
    """Synthetic dataset recipe; everything derives from the seed.

    Objects are rectangles of fixed aspect split into ``bands`` horizontal
    bands, each offset from the background by the sampled contrast with a
    per-band sign. ``band_parity`` restricts the product of band signs
    (+1 even number of dark bands, -1 odd), which makes object identity a
    higher-order feature; ``distractors_per_image`` renders unannotated
    shapes with ``distractor_parity``. ``annotation_jitter`` perturbs the
    written boxes (not the rendering) by (position, log-scale) amounts.
    """

    n_images: int = 100
    width: int = 320
    height: int = 240
    objects_per_image: tuple = (0, 3)
    height_range: tuple = (60.0, 150.0)
    aspect: float = 0.41
    contrast_range: tuple = (50.0, 90.0)
    contrast_sign: str = "dark"  # dark, light, or mixed
    bands: int = 1
    band_parity: int | None = None
    distractors_per_image: tuple = (0, 0)
    distractor_parity: int | None = None
    background: float = 128.0
    noise_sigma: float = 8.0
    annotation_jitter: tuple = (0.0, 0.0)
    rng_seed: int = 0


def _band_signs(rng, spec, parity):
    n = spec.bands
    if spec.contrast_sign == "dark":
        base = -1.0
    elif spec.contrast_sign == "light":
        base = 1.0
    else:
        base = rng.choice((-1.0, 1.0))
    if n == 1:
        return np.array([base])
    while True:
        signs = rng.choice((-1.0, 1.0), size=n)
        if parity is None or np.prod(signs) == parity:
            return signs


def _place_object(rng, spec, existing):
    for _ in range(50):
        h = rng.uniform(*spec.height_range)
        w = spec.aspect * h
        if w + 8 >= spec.width or h + 8 >= spec.height:
            continue
        x = rng.uniform(4, spec.width - w - 4)
        y = rng.uniform(4, spec.height - h - 4)
        ix, iy = int(round(x)), int(round(y))
        iw, ih = max(int(round(w)), 2), max(int(round(h)), 2)
        box = Box(float(ix), float(iy), float(iw), float(ih))
        if all(overlap(box, other, "min") < 0.25 for other in existing):
            return box
    return None


def _render_object(canvas, rng, spec, box, parity):
    signs = _band_signs(rng, spec, parity)
    c = rng.uniform(*spec.contrast_range)
    x0, y0 = int(box.x), int(box.y)
    x1, y1 = x0 + int(box.w), y0 + int(box.h)
    edges = np.linspace(y0, y1, spec.bands + 1).round().astype(int)
    for b in range(spec.bands):
        canvas[edges[b]:edges[b + 1], x0:x1] = spec.background + signs[b] * c


def generate_synthetic(spec: SynthSpec, out_dir):
    """Render the dataset and return its manifest.

    Images go to ``out_dir/images/NNNNN.png`` and the manifest to
    ``out_dir/manifest.jsonl``; re-running with the same spec reproduces
    identical bytes.
    """
    rng = np.random.default_rng(spec.rng_seed)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    entries = []
    jp, js = spec.annotation_jitter
    for i in range(spec.n_images):
        canvas = np.full((spec.height, spec.width), spec.background, dtype=np.float64)
        placed: list[Box] = []
        n_obj = int(rng.integers(spec.objects_per_image[0],
                                 spec.objects_per_image[1] + 1))
        annotated: list[Box] = []
        for _ in range(n_obj):
            box = _place_object(rng, spec, placed)
            if box is None:
                continue
            _render_object(canvas, rng, spec, box, spec.band_parity)
            placed.append(box)
            annotated.append(box)
        n_dis = int(rng.integers(spec.distractors_per_image[0],
                                 spec.distractors_per_image[1] + 1))
        for _ in range(n_dis):
            box = _place_object(rng, spec, placed)
            if box is None:
                continue
            _render_object(canvas, rng, spec, box, spec.distractor_parity)
            placed.append(box)
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, canvas.shape)
        img = np.clip(canvas, 0, 255).astype(np.uint8)
        rel = os.path.join("images", f"{i:05d}.png")
        Image.fromarray(np.repeat(img[:, :, None], 3, axis=2)).save(
            os.path.join(out_dir, rel))
        gts = []
        for box in annotated:
            if jp or js:
                dx = rng.uniform(-jp, jp) * box.h
                dy = rng.uniform(-jp, jp) * box.h
                f = float(np.exp(rng.uniform(-js, js)))
                box = Box(x=box.cx + dx - box.w * f / 2.0,
                          y=box.cy + dy - box.h * f / 2.0,
                          w=box.w * f, h=box.h * f)
            gts.append(GtBox(box=box))
        entries.append(ManifestEntry(image_path=rel, annotations=gts,
                                     video_id="synth", frame_index=i))
    manifest = DatasetManifest(entries=entries, base_dir=os.path.abspath(out_dir))
    save_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest
