"""Boosting core: 256-bin feature quantization, weighted decision stumps
and depth-limited trees, discrete AdaBoost rounds, and the soft cascade.

All split search runs on byte-binned features. Tie-breaking is fixed
(smallest feature index, then smallest bin, then polarity +1) so training
is deterministic and matches brute-force enumeration exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channels import FilterBank
from .errors import TrainError
from .geometry import ModelGeometry

EPS_MIN = 1e-8


@dataclass
class TrainSchedule:
    """Stage sizes and feature-search policy for cascade training."""

    stage_sizes: tuple = (64, 256, 1024, 4096)
    n_neg_cap: int = 50000
    tree_depth: int = 2
    feature_fraction: float = 1.0 / 16.0
    exhaustive_first: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        sizes = tuple(self.stage_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("stage_sizes must be non-empty and strictly increasing")
        if not (0.0 < self.feature_fraction <= 1.0):
            raise ValueError("feature_fraction must be in (0, 1]")
        if self.tree_depth < 1:
            raise ValueError("tree_depth must be >= 1")
        if self.n_neg_cap < 2:
            raise ValueError("n_neg_cap must be >= 2")
        self.stage_sizes = sizes


@dataclass
class QuantizedMatrix:
    """Byte-binned training matrix with per-feature bin edges."""

    bins: np.ndarray     # (N, K) uint8
    vmin: np.ndarray     # (K,)
    vmax: np.ndarray     # (K,)
    labels: np.ndarray   # (N,) int8, +-1
    weights: np.ndarray  # (N,) float64

    @property
    def n_samples(self) -> int:
        return self.bins.shape[0]

    @property
    def n_features(self) -> int:
        return self.bins.shape[1]


def bin_edges_inv_width(vmin, vmax):
    """256/(max-min) per feature, 0 for constant features.

    The single shared quantization expression: bin = floor((v-min)*invw),
    clipped to [0, 255]. Detection-time binning uses the same formula with
    the edges frozen into the model.
    """
    return np.where(vmax > vmin, 256.0 / (vmax - vmin), 0.0)


def quantize_with_edges(features, vmin, vmax):
    invw = bin_edges_inv_width(vmin, vmax)
    b = np.floor((features - vmin) * invw)
    return np.clip(b, 0.0, 255.0).astype(np.uint8)


def quantize(features, labels, weights=None) -> QuantizedMatrix:
    """Bin each feature linearly between its observed min and max.

    256 equal-width bins; constant features map to bin 0. Weights default
    to uniform and are normalized to sum 1.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be (n_samples, n_features)")
    if not np.isfinite(x).all():
        raise ValueError("non-finite feature")
    labels = np.asarray(labels, dtype=np.int8)
    if labels.shape[0] != x.shape[0]:
        raise ValueError("labels length mismatch")
    if weights is None:
        weights = np.full(x.shape[0], 1.0 / x.shape[0], dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
    vmin = x.min(axis=0)
    vmax = x.max(axis=0)
    return QuantizedMatrix(bins=quantize_with_edges(x, vmin, vmax),
                           vmin=vmin, vmax=vmax, labels=labels, weights=weights)


@dataclass
class TreeNode:
    """One node of a weak-learner tree; leaves carry feature = -1."""

    feature: int = -1
    threshold_bin: int = 0
    polarity: int = 1
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_value: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def train_stump(q: QuantizedMatrix, candidate_features, sample_idx=None):
    """Minimum weighted 0/1 error stump over (feature, bin, polarity).

    A sample routes right when ``(bin > thr) == (polarity > 0)``; the right
    side predicts +polarity. Returns (feature, threshold_bin, polarity,
    weighted_error) under the fixed tie-break.
    """
    cand = np.sort(np.asarray(candidate_features, dtype=np.int64))
    if cand.size == 0:
        raise ValueError("candidate feature set is empty")
    if sample_idx is None:
        sample_idx = np.arange(q.n_samples, dtype=np.int64)
    else:
        sample_idx = np.asarray(sample_idx, dtype=np.int64)
    err, thr, pol = kernels.stump_scan(q.bins, q.labels, q.weights, sample_idx, cand)
    i = int(np.argmin(err))
    return int(cand[i]), int(thr[i]), int(pol[i]), float(err[i])


def train_tree(q: QuantizedMatrix, depth: int, candidate_features,
               sample_idx=None) -> TreeNode:
    """Greedy recursive stump splitting to the given depth.

    Splits stop early on pure nodes, vanishing weight, or degenerate
    splits; leaf values are the weighted label majority (ties +1).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if sample_idx is None:
        sample_idx = np.arange(q.n_samples, dtype=np.int64)
    else:
        sample_idx = np.asarray(sample_idx, dtype=np.int64)

    def build(idx, d):
        w = q.weights[idx]
        wsum = float(w.sum())
        wpos = float(w[q.labels[idx] > 0].sum())
        wneg = wsum - wpos
        leaf = TreeNode(leaf_value=1 if wpos >= wneg else -1)
        if d == 0 or wsum < 1e-12 or wpos == 0.0 or wneg == 0.0:
            return leaf
        k, thr, pol, _err = train_stump(q, candidate_features, idx)
        b = q.bins[idx, k].astype(np.int32)
        go_right = (b > thr) == (pol > 0)
        if go_right.all() or not go_right.any():
            return leaf
        return TreeNode(feature=k, threshold_bin=thr, polarity=pol,
                        left=build(idx[~go_right], d - 1),
                        right=build(idx[go_right], d - 1))

    return build(sample_idx, depth)


@dataclass
class PackedTrees:
    """All trees flattened into parallel node arrays.

    Children hold absolute node indices; ``tree_off[t]`` is the root of
    tree ``t``. Leaves carry feature = -1 and their value in ``leaf``.
    """

    feature: np.ndarray
    thresh: np.ndarray
    pol: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    tree_off: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.tree_off.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


def pack_trees(roots) -> PackedTrees:
    feature, thresh, pol, left, right, leaf = [], [], [], [], [], []
    tree_off = []

    def add(node: TreeNode) -> int:
        i = len(feature)
        feature.append(node.feature)
        thresh.append(node.threshold_bin)
        pol.append(node.polarity)
        left.append(-1)
        right.append(-1)
        leaf.append(node.leaf_value)
        if not node.is_leaf:
            left[i] = add(node.left)
            right[i] = add(node.right)
        return i

    for root in roots:
        tree_off.append(add(root))
    return PackedTrees(
        feature=np.asarray(feature, dtype=np.int32),
        thresh=np.asarray(thresh, dtype=np.int32),
        pol=np.asarray(pol, dtype=np.int8),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        leaf=np.asarray(leaf, dtype=np.int8),
        tree_off=np.asarray(tree_off, dtype=np.int64),
    )


def apply_packed_tree(packed: PackedTrees, t: int, bins, sample_idx=None):
    """Leaf values (+-1 int8) of tree ``t`` for the given samples."""
    if sample_idx is None:
        sample_idx = np.arange(bins.shape[0], dtype=np.int64)
    else:
        sample_idx = np.asarray(sample_idx, dtype=np.int64)
    return kernels.tree_apply(bins, sample_idx, packed.feature, packed.thresh,
                              packed.pol, packed.left, packed.right,
                              packed.leaf, int(packed.tree_off[t]))


def weighted_error(q: QuantizedMatrix, pred) -> float:
    return float(np.where(pred != q.labels, q.weights, 0.0).sum())


def _round_from_pred(q: QuantizedMatrix, pred):
    eps = weighted_error(q, pred)
    if eps >= 0.5:
        raise TrainError("weak learner no better than chance")
    clamped = max(eps, EPS_MIN)
    alpha = 0.5 * np.log((1.0 - clamped) / clamped)
    agree = (pred == q.labels).astype(np.float64) * 2.0 - 1.0
    w = q.weights * np.exp(-alpha * agree)
    return alpha, w / w.sum()


def boost_round(q: QuantizedMatrix, tree: TreeNode):
    """One discrete AdaBoost round: alpha = ln((1-eps)/eps)/2 and the
    renormalized exponential weight update. eps = 0 is clamped at 1e-8;
    eps >= 0.5 raises (training collapse)."""
    packed = pack_trees([tree])
    pred = apply_packed_tree(packed, 0, q.bins)
    return _round_from_pred(q, pred)


@dataclass
class BoostedCascade:
    """Ordered weak trees with weights and per-tree rejection thresholds."""

    trees: PackedTrees
    alphas: np.ndarray
    reject_after: np.ndarray
    geometry: ModelGeometry
    n_channels: int
    vmin: np.ndarray
    vmax: np.ndarray
    filter_bank: FilterBank | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = self.trees.n_trees
        if not (len(self.alphas) == len(self.reject_after) == t):
            raise ValueError("trees, alphas, and reject thresholds disagree")
        if self.vmin.shape[0] != self.n_features:
            raise ValueError("bin edges do not match the feature layout")

    @property
    def n_trees(self) -> int:
        return self.trees.n_trees

    @property
    def n_features(self) -> int:
        return self.geometry.n_features(self.n_channels)


def cascade_score(cascade: BoostedCascade, x_bins):
    """Soft-cascade evaluation of one quantized feature vector.

    Returns (score, n_trees_evaluated); evaluation stops as soon as the
    running score drops below the rejection threshold of the tree just
    applied, so ``n_trees_evaluated < n_trees`` flags an early reject.
    """
    p = cascade.trees
    score = 0.0
    n_eval = 0
    for t in range(p.n_trees):
        node = p.tree_off[t]
        while p.feature[node] >= 0:
            b = int(x_bins[p.feature[node]])
            if (b > p.thresh[node]) == (p.pol[node] > 0):
                node = p.right[node]
            else:
                node = p.left[node]
        score = score + cascade.alphas[t] * float(p.leaf[node])
        n_eval = t + 1
        if score < cascade.reject_after[t]:
            break
    return float(score), n_eval


def positive_trajectories(cascade: BoostedCascade, pos_bins):
    """Running partial scores of every positive, shape (n_trees, n_pos)."""
    n_pos = pos_bins.shape[0]
    preds = np.empty((cascade.n_trees, n_pos), dtype=np.float64)
    for t in range(cascade.n_trees):
        preds[t] = apply_packed_tree(cascade.trees, t, pos_bins)
    return np.cumsum(cascade.alphas[:, None] * preds, axis=0)


def calibrate_reject_thresholds(cascade: BoostedCascade, pos_bins,
                                target_keep: float = 1.0, margin: float = 1e-6):
    """Per-tree rejection thresholds from positive score trajectories.

    Each threshold sits just below the minimum partial score of the
    retained positives, so those positives are never rejected. With
    ``target_keep < 1`` the retained set is the top fraction by final
    score.
    """
    if pos_bins.shape[0] == 0:
        raise ValueError("no positives to calibrate on")
    traj = positive_trajectories(cascade, pos_bins)
    if target_keep >= 1.0:
        mins = traj.min(axis=1)
    else:
        keep_n = max(int(np.ceil(target_keep * traj.shape[1])), 1)
        order = np.argsort(-traj[-1])
        mins = traj[:, order[:keep_n]].min(axis=1)
    return mins - margin


def exp_loss(labels, scores) -> float:
    """Mean exponential loss of additive scores against +-1 labels."""
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.exp(-y * np.asarray(scores, dtype=np.float64))))
