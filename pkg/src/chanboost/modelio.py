"""Versioned binary container for models, filter banks, and rescorers.

Layout: an 8-byte magic, a little-endian u64 header length, a canonical
JSON header (sorted keys, no whitespace), then the raw little-endian array
bytes in the header's declared order. Nothing in the file depends on
write time, so identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .boost import BoostedCascade, PackedTrees
from .channels import FilterBank
from .context import Rescorer
from .errors import DataError
from .geometry import ModelGeometry

MAGIC = b"CHANBST1"
FORMAT_VERSION = 1


def save_blob(path, kind: str, meta: dict, arrays: dict):
    names = sorted(arrays)
    norm = {}
    decl = []
    for name in names:
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        norm[name] = a
        decl.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
    header = json.dumps(
        {"kind": kind, "version": FORMAT_VERSION, "meta": meta, "arrays": decl},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in names:
            fh.write(norm[name].tobytes())


def load_blob(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise DataError(f"{path}: not a chanboost model file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {header.get('version')}")
        arrays = {}
        for decl in header["arrays"]:
            dtype = np.dtype(decl["dtype"])
            count = int(np.prod(decl["shape"])) if decl["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[decl["name"]] = np.frombuffer(buf, dtype=dtype).reshape(decl["shape"]).copy()
    return header["kind"], header["meta"], arrays


def _geometry_meta(g: ModelGeometry) -> dict:
    return {"model_w": g.model_w, "model_h": g.model_h, "window_w": g.window_w,
            "window_h": g.window_h, "shrink": g.shrink,
            "margin_cells": g.margin_cells}


def _geometry_from_meta(m: dict) -> ModelGeometry:
    return ModelGeometry(**{k: int(v) for k, v in m.items()})


def save_model(path, cascade: BoostedCascade):
    p = cascade.trees
    arrays = {
        "tree_feature": p.feature, "tree_thresh": p.thresh, "tree_pol": p.pol,
        "tree_left": p.left, "tree_right": p.right, "tree_leaf": p.leaf,
        "tree_off": p.tree_off, "alphas": cascade.alphas,
        "reject_after": cascade.reject_after,
        "edges_min": cascade.vmin, "edges_max": cascade.vmax,
    }
    meta = {
        "geometry": _geometry_meta(cascade.geometry),
        "n_channels": int(cascade.n_channels),
        "extra": cascade.meta,
    }
    if cascade.filter_bank is not None:
        arrays["bank_weights"] = cascade.filter_bank.weights
    save_blob(path, "cascade", meta, arrays)


def load_model(path) -> BoostedCascade:
    kind, meta, arrays = load_blob(path)
    if kind != "cascade":
        raise DataError(f"{path}: expected a cascade model, found {kind!r}")
    trees = PackedTrees(
        feature=arrays["tree_feature"], thresh=arrays["tree_thresh"],
        pol=arrays["tree_pol"], left=arrays["tree_left"],
        right=arrays["tree_right"], leaf=arrays["tree_leaf"],
        tree_off=arrays["tree_off"])
    bank = FilterBank(weights=arrays["bank_weights"]) if "bank_weights" in arrays else None
    return BoostedCascade(
        trees=trees, alphas=arrays["alphas"], reject_after=arrays["reject_after"],
        geometry=_geometry_from_meta(meta["geometry"]),
        n_channels=int(meta["n_channels"]),
        vmin=arrays["edges_min"], vmax=arrays["edges_max"],
        filter_bank=bank, meta=meta.get("extra", {}))


def save_bank(path, bank: FilterBank):
    save_blob(path, "filterbank", {}, {"weights": bank.weights})


def load_bank(path) -> FilterBank:
    kind, _meta, arrays = load_blob(path)
    if kind != "filterbank":
        raise DataError(f"{path}: expected a filter bank, found {kind!r}")
    return FilterBank(weights=arrays["weights"])


def save_rescorer(path, r: Rescorer):
    save_blob(path, "rescorer", {"bias": float(r.bias)}, {
        "weights": r.weights, "p_mean": r.p_mean, "p_scale": r.p_scale,
        "phi_mean": r.phi_mean, "phi_scale": r.phi_scale})


def load_rescorer(path) -> Rescorer:
    kind, meta, arrays = load_blob(path)
    if kind != "rescorer":
        raise DataError(f"{path}: expected a rescorer, found {kind!r}")
    return Rescorer(weights=arrays["weights"], bias=float(meta["bias"]),
                    p_mean=arrays["p_mean"], p_scale=arrays["p_scale"],
                    phi_mean=arrays["phi_mean"], phi_scale=arrays["phi_scale"])
