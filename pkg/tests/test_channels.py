"""Channel computation against independent numerical oracles."""

import math

import numpy as np
import pytest

from chanboost.channels import (
    ChannelStack,
    FilterBank,
    PyramidSpec,
    aggregate,
    apply_filter_bank,
    build_pyramid,
    compute_channel_stack,
    compute_gradients,
    estimate_lambdas,
    fit_power_law,
    learn_filter_bank,
    orientation_histogram,
    pca_filters,
    pyramid_scales,
    resize_bilinear,
    rgb_to_luv,
)


def luv_reference(r, g, b):
    """Scalar CIE LUV evaluation (D65, linear RGB), independent oracle."""
    rr, gg, bb = r / 255.0, g / 255.0, b / 255.0
    x = 0.412453 * rr + 0.357580 * gg + 0.180423 * bb
    y = 0.212671 * rr + 0.715160 * gg + 0.072169 * bb
    z = 0.019334 * rr + 0.119193 * gg + 0.950227 * bb
    xn = 0.412453 + 0.357580 + 0.180423
    yn = 0.212671 + 0.715160 + 0.072169
    zn = 0.019334 + 0.119193 + 0.950227
    un = 4.0 * xn / (xn + 15.0 * yn + 3.0 * zn)
    vn = 9.0 * yn / (xn + 15.0 * yn + 3.0 * zn)
    t = y / yn
    if t > (6.0 / 29.0) ** 3:
        lum = 116.0 * t ** (1.0 / 3.0) - 16.0
    else:
        lum = (29.0 / 3.0) ** 3 * t
    den = x + 15.0 * y + 3.0 * z
    if den > 0:
        up, vp = 4.0 * x / den, 9.0 * y / den
    else:
        up, vp = un, vn
    u = 13.0 * lum * (up - un)
    v = 13.0 * lum * (vp - vn)
    return lum / 100.0, (u + 90.0) / 270.0, (v + 140.0) / 250.0


class TestRgbToLuv:
    def test_black_pixel(self):
        out = rgb_to_luv(np.zeros((1, 1, 3), np.uint8))
        assert out[0, 0, 0] == 0.0
        assert out[1, 0, 0] == pytest.approx(90.0 / 270.0, abs=1e-12)
        assert out[2, 0, 0] == pytest.approx(140.0 / 250.0, abs=1e-12)

    def test_white_pixel_tops_l_range(self):
        out = rgb_to_luv(np.full((1, 1, 3), 255, np.uint8))
        assert out[0, 0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_mid_gray_matches_reference(self):
        out = rgb_to_luv(np.full((1, 1, 3), 128, np.uint8))
        ref = luv_reference(128, 128, 128)
        for i in range(3):
            assert out[i, 0, 0] == pytest.approx(ref[i], abs=1e-5)

    def test_random_pixels_match_reference(self):
        rng = np.random.default_rng(7)
        img = rng.integers(0, 256, (4, 5, 3)).astype(np.uint8)
        out = rgb_to_luv(img)
        for i in range(4):
            for j in range(5):
                ref = luv_reference(*img[i, j])
                for c in range(3):
                    assert out[c, i, j] == pytest.approx(ref[c], abs=1e-5)

    def test_values_in_unit_range(self):
        rng = np.random.default_rng(8)
        img = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        out = rgb_to_luv(img)
        assert out.min() >= 0.0 and out.max() <= 1.0


def gradient_reference(plane):
    """Scalar centered finite differences with replicated borders."""
    h, w = plane.shape
    mag = np.zeros((h, w))
    ori = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            dx = (plane[i, min(j + 1, w - 1)] - plane[i, max(j - 1, 0)]) / 2.0
            dy = (plane[min(i + 1, h - 1), j] - plane[max(i - 1, 0), j]) / 2.0
            mag[i, j] = math.hypot(dx, dy)
            ori[i, j] = math.atan2(dy, dx) % math.pi
    return mag, ori


class TestGradients:
    def test_constant_plane(self):
        mag, _ = compute_gradients(np.full((6, 7), 3.5))
        assert np.all(mag == 0.0)

    def test_ramp(self):
        x = np.tile(np.arange(8.0), (6, 1))
        mag, ori = compute_gradients(x)
        assert np.allclose(mag[:, 1:-1], 1.0)
        assert np.allclose(ori[:, 1:-1], 0.0)

    def test_random_plane_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        plane = rng.random((5, 5))
        mag, ori = compute_gradients(plane)
        rmag, rori = gradient_reference(plane)
        assert np.abs(mag - rmag).max() <= 1e-6
        assert np.abs(ori - rori).max() <= 1e-6

    def test_orientation_range(self):
        rng = np.random.default_rng(4)
        _, ori = compute_gradients(rng.random((9, 9)))
        assert ori.min() >= 0.0 and ori.max() < math.pi


class TestOrientationHistogram:
    def test_exact_bin_center(self):
        mag = np.ones((1, 1))
        ori = np.zeros((1, 1))
        out = orientation_histogram(mag, ori, 6)
        assert out[0, 0, 0] == 1.0
        assert np.all(out[1:] == 0.0)

    def test_midway_between_bins(self):
        out = orientation_histogram(np.ones((1, 1)),
                                    np.full((1, 1), math.pi / 12.0), 6)
        assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-12)
        assert out[1, 0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_mass_conservation(self):
        rng = np.random.default_rng(5)
        mag = rng.random((13, 11)) * 4
        ori = rng.random((13, 11)) * math.pi * 0.999999
        out = orientation_histogram(mag, ori, 6)
        assert np.abs(out.sum(axis=0) - mag).max() <= 1e-6

    def test_per_pixel_split_brute_force(self):
        rng = np.random.default_rng(6)
        mag = rng.random((4, 4))
        ori = rng.random((4, 4)) * math.pi * 0.999
        n = 6
        out = orientation_histogram(mag, ori, n)
        for i in range(4):
            for j in range(4):
                t = ori[i, j] * n / math.pi
                b0 = int(t)
                f = t - b0
                expect = np.zeros(n)
                expect[b0 % n] += (1 - f) * mag[i, j]
                expect[(b0 + 1) % n] += f * mag[i, j]
                assert np.abs(out[:, i, j] - expect).max() <= 1e-9


class TestAggregate:
    def test_constant_plane(self):
        out = aggregate(np.full((12, 8), 2.25), 4)
        assert np.allclose(out, 2.25)

    def test_block_means_by_hand(self):
        rng = np.random.default_rng(9)
        plane = rng.random((8, 8))
        out = aggregate(plane, 4, smooth=False)
        assert out.shape == (2, 2)
        for bi in range(2):
            for bj in range(2):
                block = plane[bi * 4:(bi + 1) * 4, bj * 4:(bj + 1) * 4]
                assert out[bi, bj] == pytest.approx(block.mean(), abs=1e-12)

    def test_window_cell_shape(self):
        out = aggregate(np.zeros((128, 64)), 4)
        assert out.shape == (32, 16)

    def test_mean_preserving_before_smoothing(self):
        rng = np.random.default_rng(10)
        plane = rng.random((24, 36))
        out = aggregate(plane, 4, smooth=False)
        assert out.mean() == pytest.approx(plane.mean(), abs=1e-6)


class TestChannelStack:
    def test_ten_channels(self):
        rng = np.random.default_rng(11)
        img = rng.integers(0, 256, (32, 24, 3)).astype(np.uint8)
        stack = compute_channel_stack(img)
        assert stack.n_channels == 10
        assert stack.data.shape == (10, 8, 6)

    def test_constant_gray_has_zero_orientation_channels(self):
        img = np.full((16, 16, 3), 77, np.uint8)
        stack = compute_channel_stack(img)
        assert np.all(stack.data[3:] == 0.0)

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        img = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        a = compute_channel_stack(img)
        b = compute_channel_stack(img)
        assert a.data.tobytes() == b.data.tobytes()

    def test_too_small_image(self):
        with pytest.raises(ValueError, match="image too small"):
            compute_channel_stack(np.zeros((2, 2, 3), np.uint8), shrink=4)


def _random_stacks(rng, n=6, side=12, channels=3):
    return [ChannelStack(data=rng.random((channels, side, side)), shrink=4)
            for _ in range(n)]


class TestFilterBank:
    def test_rank_one_patches_recover_direction(self):
        # stacks are exactly filter-sized so every sampled patch is a
        # scalar multiple of one fixed patch plus tiny noise
        rng = np.random.default_rng(13)
        base = rng.random((4, 4))
        base /= np.linalg.norm(base)
        stacks = []
        for _ in range(40):
            amp = rng.uniform(0.5, 2.0)
            noisy = amp * base + rng.normal(0, 1e-4, (4, 4))
            stacks.append(ChannelStack(data=noisy[None, :, :], shrink=4))
        bank = learn_filter_bank(stacks, n_filters=2, side=4, n_patches=500, seed=0)
        cos = abs(float(np.sum(bank.weights[0, 0] * base)))
        assert cos >= 1.0 - 1e-6

    def test_kernels_orthonormal(self):
        rng = np.random.default_rng(14)
        bank = learn_filter_bank(_random_stacks(rng), n_filters=4, side=6,
                                 n_patches=800, seed=1)
        for c in range(bank.n_input_channels):
            flat = bank.weights[c].reshape(bank.n_filters, -1)
            gram = flat @ flat.T
            assert np.abs(gram - np.eye(bank.n_filters)).max() <= 1e-6

    def test_pca_matches_svd_oracle(self):
        rng = np.random.default_rng(15)
        patches = rng.random((300, 25))
        filters, eigvals = pca_filters(patches, 4)
        centered = patches - patches.mean(axis=0)
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        # subspace angle between the two top-4 spans
        s = np.linalg.svd(filters @ vt[:4].T, compute_uv=False)
        angle = np.arccos(np.clip(s.min(), -1, 1))
        assert angle <= 1e-6
        assert np.all(np.diff(eigvals) <= 1e-12)
        assert np.allclose(eigvals, (svals[:4] ** 2) / 300.0, atol=1e-9)

    def test_insufficient_variance(self):
        patches = np.ones((50, 16))
        with pytest.raises(ValueError, match="insufficient patch variance"):
            pca_filters(patches, 2)


class TestApplyFilterBank:
    def test_channel_count(self):
        rng = np.random.default_rng(16)
        stack = ChannelStack(data=rng.random((10, 20, 20)), shrink=4)
        bank = FilterBank(weights=rng.random((10, 4, 8, 8)))
        out = apply_filter_bank(stack, bank)
        assert out.n_channels == 40
        assert out.data.shape == (40, 20, 20)

    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(17)
        stack = ChannelStack(data=rng.random((1, 15, 15)), shrink=4)
        k = np.zeros((1, 1, 8, 8))
        k[0, 0, 4, 4] = 1.0
        out = apply_filter_bank(stack, FilterBank(weights=k))
        assert np.allclose(out.data[0], stack.data[0])

    def test_zero_mean_kernel_on_constant_plane(self):
        stack = ChannelStack(data=np.full((1, 12, 12), 3.0), shrink=4)
        rng = np.random.default_rng(18)
        k = rng.random((4, 4))
        k -= k.mean()
        out = apply_filter_bank(stack, FilterBank(weights=k[None, None]))
        assert np.abs(out.data).max() <= 1e-12

    def test_channel_mismatch(self):
        stack = ChannelStack(data=np.zeros((3, 10, 10)), shrink=4)
        bank = FilterBank(weights=np.zeros((10, 4, 8, 8)))
        with pytest.raises(ValueError):
            apply_filter_bank(stack, bank)


class TestPyramid:
    def test_scale_list_640x480(self):
        spec = PyramidSpec(scales_per_octave=8, n_octaves_up=1, min_image_side=64)
        scales = pyramid_scales(640, 480, spec)
        assert scales[0] == 2.0
        ratio = 2.0 ** (-1.0 / 8.0)
        for a, b in zip(scales, scales[1:]):
            assert b == a * ratio  # exact by construction
        assert 480 * scales[-1] >= 64
        assert 480 * scales[-1] * ratio < 64

    def test_small_image_falls_back_to_unit_scale(self):
        spec = PyramidSpec(min_image_side=1000)
        assert list(pyramid_scales(64, 48, spec)) == [1.0]

    def test_approximate_matches_exact_at_octaves(self):
        rng = np.random.default_rng(19)
        img = rng.integers(0, 256, (64, 48, 3)).astype(np.uint8)
        spec_e = PyramidSpec(scales_per_octave=2, n_octaves_up=0, min_image_side=24,
                             approximate=False)
        spec_a = PyramidSpec(scales_per_octave=2, n_octaves_up=0, min_image_side=24,
                             approximate=True)
        exact = build_pyramid(img, spec_e)
        approx = build_pyramid(img, spec_a)
        assert len(exact) == len(approx)
        for j in range(0, len(exact), 2):
            assert np.array_equal(exact[j].data, approx[j].data)

    def test_lambda_zero_approximates_resampling(self):
        # smooth synthetic image: the approximated intermediate level must
        # sit close to the exactly recomputed one
        yy, xx = np.mgrid[0:96, 0:80]
        img = np.stack([120 + 60 * np.sin(xx / 19.0),
                        120 + 60 * np.cos(yy / 23.0),
                        np.full_like(xx, 100.0)], axis=2)
        zero = {"luv": 0.0, "grad": 0.0}
        spec_a = PyramidSpec(scales_per_octave=4, n_octaves_up=0, min_image_side=40,
                             approximate=True, lambdas=zero)
        spec_e = PyramidSpec(scales_per_octave=4, n_octaves_up=0, min_image_side=40,
                             approximate=False, lambdas=zero)
        approx = build_pyramid(img, spec_a)
        exact = build_pyramid(img, spec_e)
        for j in (1, 2, 3):
            diff = np.abs(approx[j].data - exact[j].data).max()
            assert diff < 0.05, f"level {j} diverged by {diff}"

    def test_channel_count_with_bank(self):
        rng = np.random.default_rng(20)
        img = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        bank = FilterBank(weights=rng.random((10, 2, 4, 4)))
        spec = PyramidSpec(scales_per_octave=1, n_octaves_up=0, min_image_side=32)
        stacks = build_pyramid(img, spec, bank=bank)
        assert all(s.n_channels == 20 for s in stacks)


class TestLambdaEstimation:
    def test_two_point_fit_is_exact_slope(self):
        lam = fit_power_law([1.0, 0.5], [1.0, 2.0 ** 0.5])
        assert lam == pytest.approx(0.5, abs=1e-12)

    def test_scale_invariant_energies(self):
        lam = fit_power_law([1.0, 0.7, 0.5, 0.35], [2.0, 2.0, 2.0, 2.0])
        assert lam == pytest.approx(0.0, abs=1e-12)

    def test_power_law_stack_fn(self):
        # fake channel computation whose energy decays as s**-0.5
        from chanboost.channels import ChannelStack as CS

        def fake(img, shrink=4, n_orientations=6):
            s = img.shape[0] / 64.0
            return CS(data=np.full((10, 4, 4), s ** -0.5), shrink=shrink)

        imgs = [np.zeros((64, 64, 3)), np.zeros((64, 64, 3))]
        lams = estimate_lambdas(imgs, stack_fn=fake)
        assert lams["luv"] == pytest.approx(0.5, abs=0.05)
        assert lams["grad"] == pytest.approx(0.5, abs=0.05)

    def test_color_means_are_scale_invariant(self):
        rng = np.random.default_rng(21)
        blocks = rng.integers(40, 220, (6, 6, 3)).astype(np.float64)
        img = np.repeat(np.repeat(blocks, 24, axis=0), 24, axis=1)
        lams = estimate_lambdas([img, img[::-1].copy()])
        assert abs(lams["luv"]) <= 0.05

    def test_needs_two_images(self):
        with pytest.raises(ValueError):
            estimate_lambdas([np.zeros((32, 32, 3))])


class TestResize:
    def test_identity(self):
        rng = np.random.default_rng(22)
        a = rng.random((9, 7))
        assert np.allclose(resize_bilinear(a, 9, 7), a)

    def test_constant_preserved(self):
        out = resize_bilinear(np.full((10, 10, 3), 5.0), 7, 13)
        assert np.allclose(out, 5.0)

    def test_mean_roughly_preserved(self):
        rng = np.random.default_rng(23)
        a = rng.random((40, 40))
        out = resize_bilinear(a, 20, 20)
        assert out.mean() == pytest.approx(a.mean(), abs=0.02)
