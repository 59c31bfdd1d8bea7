"""Boosting core against brute-force enumeration and AdaBoost identities."""

import numpy as np
import pytest

from chanboost import boost
from chanboost.boost import (
    BoostedCascade,
    QuantizedMatrix,
    TreeNode,
    apply_packed_tree,
    boost_round,
    calibrate_reject_thresholds,
    cascade_score,
    exp_loss,
    pack_trees,
    quantize,
    train_stump,
    train_tree,
)
from chanboost.errors import TrainError
from chanboost.geometry import ModelGeometry


def make_q(bins, labels, weights=None):
    bins = np.asarray(bins, dtype=np.uint8)
    n, k = bins.shape
    if weights is None:
        weights = np.full(n, 1.0 / n)
    return QuantizedMatrix(bins=bins, vmin=np.zeros(k), vmax=np.full(k, 255.0),
                           labels=np.asarray(labels, np.int8),
                           weights=np.asarray(weights, np.float64))


def stump_brute_force(bins, labels, weights):
    """Enumerate every (feature, bin, polarity) triple directly."""
    best = None
    for k in range(bins.shape[1]):
        col = bins[:, k].astype(np.int32)
        for tau in range(256):
            for p in (1, -1):
                pred = np.where((col > tau) == (p > 0), p, -p)
                err = float(weights[pred != labels].sum())
                if best is None or err < best[3]:
                    best = (k, tau, p, err)
    return best


class TestQuantize:
    def test_range_endpoints(self):
        col = np.linspace(0.0, 1.0, 256)[:, None]
        q = quantize(col, np.ones(256))
        assert q.bins[0, 0] == 0
        assert q.bins[-1, 0] == 255
        assert np.array_equal(q.bins[:, 0], np.arange(256))

    def test_constant_column(self):
        q = quantize(np.full((10, 2), 3.7), np.ones(10))
        assert np.all(q.bins == 0)
        assert q.vmin[0] == q.vmax[0] == 3.7

    def test_dequantized_centers_close(self):
        rng = np.random.default_rng(0)
        x = rng.random((500, 3)) * 7 - 2
        q = quantize(x, np.ones(500))
        width = (q.vmax - q.vmin) / 256.0
        centers = q.vmin + (q.bins.astype(np.float64) + 0.5) * width
        assert np.abs(centers - x).max() <= width.max()

    def test_non_finite_rejected(self):
        x = np.ones((4, 2))
        x[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite feature"):
            quantize(x, np.ones(4))

    def test_weights_normalized(self):
        q = quantize(np.random.default_rng(1).random((8, 2)), np.ones(8),
                     weights=np.arange(1.0, 9.0))
        assert q.weights.sum() == pytest.approx(1.0, abs=1e-9)


class TestTrainStump:
    def test_separable_pair(self):
        q = make_q([[10], [200]], [1, -1])
        k, tau, pol, err = train_stump(q, [0])
        assert (k, tau, pol, err) == (0, 10, -1, 0.0)

    def test_one_class_degenerate_split(self):
        q = make_q([[5], [100], [250]], [1, 1, 1])
        _, _, _, err = train_stump(q, [0])
        assert err == 0.0

    def test_matches_brute_force(self):
        # integer-grid weights keep every partial sum exact in float64, so
        # the comparison is bitwise, argmin included
        rng = np.random.default_rng(2)
        for trial in range(10):
            n = int(rng.integers(20, 200))
            k = int(rng.integers(2, 32))
            bins = rng.integers(0, 256, (n, k)).astype(np.uint8)
            labels = rng.choice([-1, 1], n).astype(np.int8)
            weights = rng.integers(1, 64, n).astype(np.float64) / 128.0
            q = make_q(bins, labels, weights)
            got = train_stump(q, np.arange(k))
            want = stump_brute_force(bins, labels, weights)
            assert got == want, f"trial {trial}"

    def test_empty_candidates(self):
        q = make_q([[0]], [1])
        with pytest.raises(ValueError):
            train_stump(q, [])


class TestTrainTree:
    def test_depth_one_is_a_stump(self):
        rng = np.random.default_rng(3)
        bins = rng.integers(0, 256, (60, 5)).astype(np.uint8)
        labels = rng.choice([-1, 1], 60).astype(np.int8)
        q = make_q(bins, labels)
        tree = train_tree(q, 1, np.arange(5))
        k, tau, pol, _ = train_stump(q, np.arange(5))
        assert (tree.feature, tree.threshold_bin, tree.polarity) == (k, tau, pol)
        assert tree.left.is_leaf and tree.right.is_leaf

    def test_xor_needs_depth_two(self):
        bins = np.array([[0, 0], [0, 255], [255, 0], [255, 255]], np.uint8)
        labels = np.array([-1, 1, 1, -1], np.int8)
        q = make_q(bins, labels)
        tree = train_tree(q, 2, [0, 1])
        packed = pack_trees([tree])
        pred = apply_packed_tree(packed, 0, bins)
        assert np.array_equal(pred, labels)

    def test_depth_bound(self):
        rng = np.random.default_rng(4)
        bins = rng.integers(0, 256, (200, 8)).astype(np.uint8)
        labels = rng.choice([-1, 1], 200).astype(np.int8)
        q = make_q(bins, labels)
        for d in (1, 2, 3, 4):
            assert train_tree(q, d, np.arange(8)).depth() <= d

    def test_pure_node_stops_early(self):
        q = make_q([[0], [255]], [1, 1])
        tree = train_tree(q, 3, [0])
        assert tree.is_leaf and tree.leaf_value == 1


class TestBoostRound:
    def _quarter_error_setup(self):
        # stump errs on exactly one of four equally weighted samples
        bins = np.array([[0], [0], [0], [200]], np.uint8)
        labels = np.array([-1, -1, 1, 1], np.int8)
        q = make_q(bins, labels)
        tree = TreeNode(feature=0, threshold_bin=100, polarity=1,
                        left=TreeNode(leaf_value=-1), right=TreeNode(leaf_value=1))
        return q, tree

    def test_alpha_closed_form(self):
        q, tree = self._quarter_error_setup()
        alpha, _ = boost_round(q, tree)
        assert alpha == pytest.approx(0.5 * np.log(3.0), abs=1e-5)
        assert alpha == pytest.approx(0.549306, abs=1e-5)

    def test_reweighting_identity(self):
        q, tree = self._quarter_error_setup()
        _, new_w = boost_round(q, tree)
        q.weights = new_w
        packed = pack_trees([tree])
        pred = apply_packed_tree(packed, 0, q.bins)
        err = float(np.where(pred != q.labels, q.weights, 0.0).sum())
        assert err == pytest.approx(0.5, abs=1e-9)

    def test_near_chance_alpha_is_small(self):
        bins = np.array([[0], [200]], np.uint8)
        labels = np.array([1, 1], np.int8)
        q = make_q(bins, labels, weights=[0.499, 0.501])
        tree = TreeNode(feature=0, threshold_bin=100, polarity=1,
                        left=TreeNode(leaf_value=-1), right=TreeNode(leaf_value=1))
        alpha, _ = boost_round(q, tree)
        expect = 0.5 * np.log(0.501 / 0.499)
        assert alpha == pytest.approx(expect, abs=1e-12)
        assert abs(alpha - 2e-3) / 2e-3 < 0.05

    def test_zero_error_clamped(self):
        bins = np.array([[0], [200]], np.uint8)
        labels = np.array([-1, 1], np.int8)
        q = make_q(bins, labels)
        tree = TreeNode(feature=0, threshold_bin=100, polarity=1,
                        left=TreeNode(leaf_value=-1), right=TreeNode(leaf_value=1))
        alpha, _ = boost_round(q, tree)
        assert alpha == pytest.approx(0.5 * np.log((1 - 1e-8) / 1e-8), abs=1e-9)

    def test_chance_level_raises(self):
        bins = np.array([[0], [200]], np.uint8)
        labels = np.array([-1, 1], np.int8)
        q = make_q(bins, labels)
        tree = TreeNode(leaf_value=1)  # constant prediction, error 0.5
        with pytest.raises(TrainError, match="no better than chance"):
            boost_round(q, tree)

    def test_exponential_loss_non_increasing(self):
        rng = np.random.default_rng(5)
        n, k = 300, 12
        x = rng.normal(size=(n, k))
        labels = np.where(x[:, 0] + 0.5 * x[:, 3] + 0.3 * rng.normal(size=n) > 0,
                          1, -1)
        q = quantize(x, labels)
        scores = np.zeros(n)
        losses = [exp_loss(q.labels, scores)]
        for _ in range(200):
            tree = train_tree(q, 2, np.arange(k))
            packed = pack_trees([tree])
            pred = apply_packed_tree(packed, 0, q.bins)
            alpha, new_w = boost_round(q, tree)
            q.weights = new_w
            scores = scores + alpha * pred
            losses.append(exp_loss(q.labels, scores))
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12)


def random_cascade(rng, n_trees=25, n_channels=3, depth=2):
    geom = ModelGeometry(model_w=5, model_h=10, window_w=8, window_h=16,
                         shrink=4, margin_cells=1)
    k = geom.n_features(n_channels)

    def random_tree(d):
        if d == 0:
            return TreeNode(leaf_value=int(rng.choice([-1, 1])))
        return TreeNode(feature=int(rng.integers(k)),
                        threshold_bin=int(rng.integers(256)),
                        polarity=int(rng.choice([-1, 1])),
                        left=random_tree(d - 1), right=random_tree(d - 1))

    roots = [random_tree(depth) for _ in range(n_trees)]
    cascade = BoostedCascade(
        trees=pack_trees(roots), alphas=rng.random(n_trees) + 0.1,
        reject_after=np.full(n_trees, -np.inf), geometry=geom,
        n_channels=n_channels, vmin=np.zeros(k), vmax=np.full(k, 1.0))
    return cascade, roots, k


def walk_tree(node: TreeNode, x_bins):
    """Independent recursive scorer used as the direct-sum oracle."""
    while not node.is_leaf:
        goes_right = (int(x_bins[node.feature]) > node.threshold_bin) == (node.polarity > 0)
        node = node.right if goes_right else node.left
    return node.leaf_value


class TestCascadeScore:
    def test_empty_cascade(self):
        geom = ModelGeometry(model_w=5, model_h=10, window_w=8, window_h=16,
                             shrink=4, margin_cells=1)
        k = geom.n_features(1)
        cascade = BoostedCascade(trees=pack_trees([]), alphas=np.empty(0),
                                 reject_after=np.empty(0), geometry=geom,
                                 n_channels=1, vmin=np.zeros(k), vmax=np.ones(k))
        assert cascade_score(cascade, np.zeros(k, np.uint8)) == (0.0, 0)

    def test_reject_everything_after_first_tree(self):
        rng = np.random.default_rng(6)
        cascade, _, k = random_cascade(rng)
        cascade.reject_after = np.full(cascade.n_trees, np.inf)
        for _ in range(5):
            _, n_eval = cascade_score(cascade, rng.integers(0, 256, k).astype(np.uint8))
            assert n_eval == 1

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(7)
        cascade, roots, k = random_cascade(rng)
        for _ in range(50):
            x = rng.integers(0, 256, k).astype(np.uint8)
            score, n_eval = cascade_score(cascade, x)
            direct = sum(a * walk_tree(r, x)
                         for a, r in zip(cascade.alphas, roots))
            assert abs(score - direct) <= 1e-12
            assert n_eval == cascade.n_trees


class TestCalibration:
    def test_no_positive_rejected_at_full_keep(self):
        rng = np.random.default_rng(8)
        cascade, _, k = random_cascade(rng)
        pos = rng.integers(0, 256, (40, k)).astype(np.uint8)
        full_scores = [cascade_score(cascade, p)[0] for p in pos]
        cascade.reject_after = calibrate_reject_thresholds(cascade, pos)
        for p, want in zip(pos, full_scores):
            score, n_eval = cascade_score(cascade, p)
            assert n_eval == cascade.n_trees
            assert score == want

    def test_constant_score_trajectory(self):
        geom = ModelGeometry(model_w=5, model_h=10, window_w=8, window_h=16,
                             shrink=4, margin_cells=1)
        k = geom.n_features(1)
        n = 6
        roots = [TreeNode(leaf_value=1) for _ in range(n)]
        alphas = np.linspace(0.5, 1.0, n)
        cascade = BoostedCascade(trees=pack_trees(roots), alphas=alphas,
                                 reject_after=np.full(n, -np.inf), geometry=geom,
                                 n_channels=1, vmin=np.zeros(k), vmax=np.ones(k))
        pos = np.zeros((3, k), np.uint8)
        thr = calibrate_reject_thresholds(cascade, pos, margin=1e-6)
        assert np.allclose(thr, np.cumsum(alphas) - 1e-6)

    def test_requires_positives(self):
        rng = np.random.default_rng(9)
        cascade, _, k = random_cascade(rng)
        with pytest.raises(ValueError):
            calibrate_reject_thresholds(cascade, np.zeros((0, k), np.uint8))
