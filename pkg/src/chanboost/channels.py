"""Aggregate channel features: LUV color, gradient magnitude, orientation
histograms, PCA filter banks, and multi-scale channel pyramids.

An image yields 10 channels (3 LUV + 1 gradient magnitude + 6 orientation
bins by default), block-averaged into shrink x shrink cells and smoothed
once with a radius-1 triangle filter. An optional learned filter bank
multiplies the channel count. All operations are deterministic pure
functions; border handling is replication everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

# Linear RGB -> XYZ (D65). RGB here is the raw 8-bit value divided by 255;
# no gamma linearization is applied, which keeps the conversion a fixed
# polynomial of the stored pixel values.
_RGB2XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])
_WHITE = _RGB2XYZ.sum(axis=1)  # XYZ of RGB=(1,1,1)
_UN = 4.0 * _WHITE[0] / (_WHITE[0] + 15.0 * _WHITE[1] + 3.0 * _WHITE[2])
_VN = 9.0 * _WHITE[1] / (_WHITE[0] + 15.0 * _WHITE[1] + 3.0 * _WHITE[2])

# Fixed output scaling to [0,1]: L* in [0,100], and for the full 8-bit RGB
# cube u* in [-83.1, 175.1], v* in [-134.1, 107.4].
LUV_SCALE = (100.0, 270.0, 250.0)
LUV_OFFSET = (0.0, 90.0, 140.0)
#: scaled (u, v) of any achromatic pixel
LUV_NEUTRAL_UV = (LUV_OFFSET[1] / LUV_SCALE[1], LUV_OFFSET[2] / LUV_SCALE[2])


def rgb_to_luv(img):
    """Convert an RGB image (any dtype, values 0..255) to scaled LUV planes.

    Returns a float64 array of shape (3, H, W) with every plane in [0, 1]:
    L*/100, (u*+90)/270, (v*+140)/250.
    """
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {rgb.shape}")
    xyz = rgb @ _RGB2XYZ.T
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    t = y / _WHITE[1]
    lum = np.where(t > (6.0 / 29.0) ** 3, 116.0 * np.cbrt(t) - 16.0,
                   (29.0 / 3.0) ** 3 * t)
    den = x + 15.0 * y + 3.0 * z
    safe = np.maximum(den, 1e-30)
    up = np.where(den > 0, 4.0 * x / safe, _UN)
    vp = np.where(den > 0, 9.0 * y / safe, _VN)
    u = 13.0 * lum * (up - _UN)
    v = 13.0 * lum * (vp - _VN)
    out = np.empty((3,) + rgb.shape[:2], dtype=np.float64)
    out[0] = lum / LUV_SCALE[0]
    out[1] = (u + LUV_OFFSET[1]) / LUV_SCALE[1]
    out[2] = (v + LUV_OFFSET[2]) / LUV_SCALE[2]
    return out


def compute_gradients(plane):
    """Centered-difference gradient magnitude and unsigned orientation.

    Borders use replication, orientation lies in [0, pi).
    """
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] < 2:
        raise ValueError("plane must be at least 2x2")
    padded = np.pad(p, 1, mode="edge")
    dx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    dy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    mag = np.hypot(dx, dy)
    ori = np.mod(np.arctan2(dy, dx), np.pi)
    return mag, ori


def orientation_histogram(mag, ori, n_bins=6):
    """Split each pixel's magnitude between its two nearest orientation bins.

    Bin centers sit at b*pi/n_bins; interpolation is linear with wraparound
    at pi, so the bins at each pixel sum to that pixel's magnitude.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    mag = np.asarray(mag, dtype=np.float64)
    ori = np.asarray(ori, dtype=np.float64)
    if mag.shape != ori.shape:
        raise ValueError("magnitude and orientation shapes differ")
    t = ori * (n_bins / np.pi)
    b0 = np.minimum(np.floor(t).astype(np.int64), n_bins - 1)
    frac = t - b0
    b1 = (b0 + 1) % n_bins
    h, w = mag.shape
    yy = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]
    out = np.zeros((n_bins, h, w), dtype=np.float64)
    out[b0, yy, xx] += (1.0 - frac) * mag
    out[b1, yy, xx] += frac * mag
    return out


def aggregate(plane, shrink, smooth=True):
    """Block-average a plane into shrink x shrink cells.

    The plane is padded by replication to a multiple of shrink first. With
    ``smooth`` a single pass of the normalized [1,2,1]/4 triangle filter is
    applied along each axis (replicated borders).
    """
    p = np.asarray(plane, dtype=np.float64)
    h, w = p.shape
    ph = (-h) % shrink
    pw = (-w) % shrink
    if ph or pw:
        p = np.pad(p, ((0, ph), (0, pw)), mode="edge")
    ch, cw = p.shape[0] // shrink, p.shape[1] // shrink
    cells = p.reshape(ch, shrink, cw, shrink).mean(axis=(1, 3))
    if smooth:
        cells = _triangle_smooth(cells)
    return cells


def _triangle_smooth(cells):
    p = np.pad(cells, 1, mode="edge")
    rows = (p[:-2, 1:-1] + 2.0 * p[1:-1, 1:-1] + p[2:, 1:-1]) / 4.0
    p = np.pad(rows, ((0, 0), (1, 1)), mode="edge")
    return (p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]) / 4.0


@dataclass
class ChannelStack:
    """Aggregated feature channels of one image at one scale.

    ``data`` is (n_channels, cells_h, cells_w), channel-major C order.
    """

    data: np.ndarray
    shrink: int
    scale: float = 1.0

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def cells_h(self) -> int:
        return self.data.shape[1]

    @property
    def cells_w(self) -> int:
        return self.data.shape[2]


def channel_groups(n_orientations=6):
    """Channel index ranges sharing one power-law exponent."""
    return {"luv": slice(0, 3), "grad": slice(3, 4 + n_orientations)}


def compute_channel_stack(img, shrink=4, n_orientations=6, scale=1.0):
    """The 10-channel stack: LUV, gradient magnitude, orientation bins."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if min(img.shape[0], img.shape[1]) < shrink:
        raise ValueError("image too small")
    luv = rgb_to_luv(img)
    mag, ori = compute_gradients(luv[0])
    hist = orientation_histogram(mag, ori, n_orientations)
    n_channels = 4 + n_orientations
    planes = [luv[0], luv[1], luv[2], mag] + [hist[b] for b in range(n_orientations)]
    first = aggregate(planes[0], shrink)
    data = np.empty((n_channels,) + first.shape, dtype=np.float64)
    data[0] = first
    for i, plane in enumerate(planes[1:], start=1):
        data[i] = aggregate(plane, shrink)
    return ChannelStack(data=data, shrink=shrink, scale=scale)


@dataclass
class FilterBank:
    """Per-channel PCA patch filters.

    ``weights`` is (n_input_channels, n_filters, side, side); each kernel
    has unit norm and kernels of one input channel are mutually orthogonal.
    """

    weights: np.ndarray

    @property
    def n_input_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_filters(self) -> int:
        return self.weights.shape[1]

    @property
    def side(self) -> int:
        return self.weights.shape[2]


def _fix_sign(vec):
    i = int(np.argmax(np.abs(vec)))
    return -vec if vec[i] < 0 else vec


def pca_filters(patches, n_filters):
    """Top principal directions of mean-centered patch rows.

    Returns (filters, eigvals): ``n_filters`` unit eigenvectors of the
    patch covariance in descending eigenvalue order, each sign-fixed so
    its largest-magnitude coefficient is positive. Raises when the
    covariance rank is below ``n_filters``.
    """
    x = np.asarray(patches, dtype=np.float64)
    x = x - x.mean(axis=0)
    cov = x.T @ x / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[n_filters - 1] <= 1e-10 * max(eigvals[0], 1e-300):
        raise ValueError("insufficient patch variance")
    filters = np.stack([_fix_sign(eigvecs[:, f]) for f in range(n_filters)])
    return filters, eigvals[:n_filters]


def learn_filter_bank(stacks, n_filters=4, side=8, n_patches=10000, seed=0):
    """Learn PCA patch filters independently per input channel.

    Samples ``n_patches`` random side x side cell patches per channel from
    the given stacks (same locations for every channel) and keeps the top
    principal directions of each channel's patch distribution.
    """
    if not stacks:
        raise ValueError("need at least one stack")
    n_channels = stacks[0].n_channels
    usable = [s for s in stacks if s.cells_h >= side and s.cells_w >= side]
    if not usable:
        raise ValueError(f"no stack is at least {side}x{side} cells")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(usable), size=n_patches)
    ys = rng.random(n_patches)
    xs = rng.random(n_patches)
    weights = np.empty((n_channels, n_filters, side, side), dtype=np.float64)
    for c in range(n_channels):
        patches = np.empty((n_patches, side * side), dtype=np.float64)
        for i in range(n_patches):
            s = usable[idx[i]]
            y = int(ys[i] * (s.cells_h - side + 1))
            x = int(xs[i] * (s.cells_w - side + 1))
            patches[i] = s.data[c, y:y + side, x:x + side].ravel()
        filters, _ = pca_filters(patches, n_filters)
        weights[c] = filters.reshape(n_filters, side, side)
    return FilterBank(weights=weights)


def apply_filter_bank(stack: ChannelStack, bank: FilterBank) -> ChannelStack:
    """Correlate every channel with every kernel (replicate-pad borders).

    Output channel ``c * n_filters + f`` is input channel ``c`` filtered
    with kernel ``f``.
    """
    if bank.n_input_channels != stack.n_channels:
        raise ValueError(
            f"bank expects {bank.n_input_channels} channels, stack has {stack.n_channels}")
    n_out = stack.n_channels * bank.n_filters
    out = np.empty((n_out, stack.cells_h, stack.cells_w), dtype=np.float64)
    for c in range(stack.n_channels):
        for f in range(bank.n_filters):
            out[c * bank.n_filters + f] = ndimage.correlate(
                stack.data[c], bank.weights[c, f], mode="nearest")
    return ChannelStack(data=out, shrink=stack.shrink, scale=stack.scale)


def resize_bilinear(arr, out_h, out_w):
    """Bilinear resample with half-pixel centers and replicated borders.

    Works on (H, W) planes and (H, W, C) images alike.
    """
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if a.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    r0 = a[y0]
    r1 = a[y1]
    top = r0[:, x0] * (1.0 - fx) + r0[:, x1] * fx
    bot = r1[:, x0] * (1.0 - fx) + r1[:, x1] * fx
    return top * (1.0 - fy) + bot * fy


@dataclass
class PyramidSpec:
    """Scale ladder for multi-scale detection.

    Scales start at ``2**n_octaves_up`` and descend by a constant factor
    ``2**(-1/scales_per_octave)`` while the nominal short image side stays
    at or above ``min_image_side``. With ``approximate`` only octave levels
    are computed from resampled images; intermediate levels resample the
    octave stack above and rescale each channel group by
    ``(s/s0)**-lambda``.
    """

    scales_per_octave: int = 8
    n_octaves_up: int = 1
    min_image_side: int = 128
    approximate: bool = False
    lambdas: dict = field(default_factory=lambda: {"luv": 0.0, "grad": 0.11})

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        for v in self.lambdas.values():
            if not np.isfinite(v):
                raise ValueError("lambdas must be finite")


def pyramid_scales(width, height, spec: PyramidSpec):
    """Nominal scale per pyramid level, largest first.

    Built multiplicatively so adjacent levels differ by exactly the same
    ratio. Falls back to a single unit scale when the image is already
    below the minimum side.
    """
    ratio = 2.0 ** (-1.0 / spec.scales_per_octave)
    short = min(width, height)
    scales = []
    s = 2.0 ** spec.n_octaves_up
    while short * s >= spec.min_image_side:
        scales.append(s)
        s = s * ratio
    if not scales:
        scales = [1.0]
    return np.array(scales, dtype=np.float64)


def build_pyramid(img, spec: PyramidSpec, shrink=4, n_orientations=6, bank=None):
    """Channel stacks over the full scale ladder of one image."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    scales = pyramid_scales(w, h, spec)
    spo = spec.scales_per_octave
    stacks: list[ChannelStack] = []
    exact_cache: dict[int, ChannelStack] = {}

    def exact_stack(j):
        s = scales[j]
        rh = max(int(round(h * s)), shrink)
        rw = max(int(round(w * s)), shrink)
        resized = img if (rh == h and rw == w) else resize_bilinear(img, rh, rw)
        return compute_channel_stack(resized, shrink=shrink,
                                     n_orientations=n_orientations, scale=s)

    groups = channel_groups(n_orientations)
    for j, s in enumerate(scales):
        if not spec.approximate or j % spo == 0:
            stack = exact_stack(j)
            exact_cache[j] = stack
        else:
            j0 = (j // spo) * spo
            src = exact_cache[j0]
            ch = max(-(-max(int(round(h * s)), shrink) // shrink), 1)
            cw = max(-(-max(int(round(w * s)), shrink) // shrink), 1)
            data = np.empty((src.n_channels, ch, cw), dtype=np.float64)
            for c in range(src.n_channels):
                data[c] = resize_bilinear(src.data[c], ch, cw)
            for name, sl in groups.items():
                lam = spec.lambdas.get(name, 0.0)
                if lam != 0.0:
                    data[sl] *= (s / scales[j0]) ** (-lam)
            stack = ChannelStack(data=data, shrink=shrink, scale=s)
        if bank is not None:
            stack = apply_filter_bank(stack, bank)
        stacks.append(stack)
    return stacks


def fit_power_law(scales, energies):
    """Exponent lambda of E(s) ~ s**-lambda by least squares in log-log."""
    scales = np.asarray(scales, dtype=np.float64)
    energies = np.asarray(energies, dtype=np.float64)
    if scales.size < 2:
        raise ValueError("need at least 2 scales")
    design = np.stack([np.log(scales), np.ones_like(scales)], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.log(np.maximum(energies, 1e-300)),
                               rcond=None)
    return -coef[0]


_LAMBDA_SCALES = 2.0 ** (-np.arange(1, 7) / 4.0)


def estimate_lambdas(images, scales=None, shrink=4, n_orientations=6,
                     stack_fn=compute_channel_stack):
    """Fit the per-group power-law exponents from real images.

    Computes channel stacks at a fixed descending scale set, measures mean
    absolute channel energy per group relative to the unit scale, and fits
    the slope of log energy against log scale pooled over all images.
    """
    if len(images) < 2:
        raise ValueError("need at least 2 images")
    scale_set = _LAMBDA_SCALES if scales is None else np.asarray(scales, np.float64)
    if scale_set.size < 2:
        raise ValueError("need at least 2 scales")
    groups = channel_groups(n_orientations)
    points = {name: [] for name in groups}
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape[:2]
        ref = stack_fn(img, shrink=shrink, n_orientations=n_orientations)
        ref_e = {name: np.abs(ref.data[sl]).mean() for name, sl in groups.items()}
        for s in scale_set:
            resized = resize_bilinear(img, max(int(round(h * s)), shrink),
                                      max(int(round(w * s)), shrink))
            stack = stack_fn(resized, shrink=shrink, n_orientations=n_orientations)
            for name, sl in groups.items():
                e = np.abs(stack.data[sl]).mean()
                points[name].append((s, e / max(ref_e[name], 1e-300)))
    out = {}
    for name, pts in points.items():
        arr = np.array(pts)
        out[name] = fit_power_law(arr[:, 0], arr[:, 1])
    return out
