"""Nucleus shape sets and the similarity measures used to prune and learn them.

SSIM is evaluated over every fully-contained ``window x window`` patch
(stride 1, uniform weights, population statistics) and averaged.
CW-SSIM compares the oriented complex subbands of a steerable pyramid
over sliding windows and averages the per-band indices.
"""
from dataclasses import dataclass
from math import factorial
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

SHAPE_KINDS = ("expert", "reference", "learnable")
IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".bmp", ".pgm", ".jpg", ".jpeg")


@dataclass
class ShapeSet:
    """An ordered stack of square shapes, ``grids`` of shape (n, side, side)."""

    grids: np.ndarray
    kind: str = "expert"

    def __post_init__(self):
        g = np.asarray(self.grids, dtype=np.float64)
        if g.ndim == 2:
            g = g[None]
        if g.ndim != 3 or g.shape[1] != g.shape[2]:
            raise ValueError(f"shapes must be square grids stacked as (n, s, s), got {g.shape}")
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape-set kind {self.kind!r}")
        if not np.all(np.isfinite(g)):
            raise ValueError("shape set contains non-finite values")
        if self.kind != "learnable" and not np.all((g == 0) | (g == 1)):
            raise ValueError(f"{self.kind} shapes must be binary")
        self.grids = g

    def __len__(self):
        return self.grids.shape[0]

    def __iter__(self):
        return iter(self.grids)

    def __getitem__(self, i):
        return self.grids[i]

    @property
    def side(self):
        return self.grids.shape[1]


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 8
    C1: float = 0.01**2
    C2: float = 0.03**2

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        if not (self.C1 > 0 and self.C2 > 0):
            raise ValueError("C1 and C2 must be positive")


@dataclass(frozen=True)
class CwSsimConfig:
    levels: int = 2
    orientations: int = 6
    K: float = 0.01
    window_size: int = 7

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.orientations < 2:
            raise ValueError("orientations must be >= 2")
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.window_size < 1:
            raise ValueError("window_size must be positive")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"shapes must be 2-D and equal-sized, got {a.shape} and {b.shape}")
    return a, b


# ---------------------------------------------------------------------------
# SSIM


def _box_mean(a, w):
    return sliding_window_view(a, (w, w)).mean(axis=(-2, -1))


def _box_adjoint(a, w, shape):
    """Spread each window value uniformly back over its ``w x w`` support."""
    H, W = shape
    # adjoint of the valid window sum: add a[m, n] to every covered cell
    c = np.zeros((H + 1, W + 1))
    c[: a.shape[0], : a.shape[1]] += a
    c[w : w + a.shape[0], : a.shape[1]] -= a
    c[: a.shape[0], w : w + a.shape[1]] -= a
    c[w : w + a.shape[0], w : w + a.shape[1]] += a
    return np.cumsum(np.cumsum(c, axis=0), axis=1)[:H, :W]


def _ssim_stats(a, b, w):
    mu_a = _box_mean(a, w)
    mu_b = _box_mean(b, w)
    var_a = _box_mean(a * a, w) - mu_a * mu_a
    var_b = _box_mean(b * b, w) - mu_b * mu_b
    cov = _box_mean(a * b, w) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _window(shape, config):
    return min(config.window_size, shape[0], shape[1])


def ssim_map(a, b, config=SsimConfig()):
    """Per-patch SSIM values for every fully-contained window."""
    a, b = _pair(a, b)
    w = _window(a.shape, config)
    mu_a, mu_b, var_a, var_b, cov = _ssim_stats(a, b, w)
    lum = (2 * mu_a * mu_b + config.C1) / (mu_a * mu_a + mu_b * mu_b + config.C1)
    con = (2 * cov + config.C2) / (var_a + var_b + config.C2)
    return lum * con


def ssim(a, b, config=SsimConfig()):
    """Mean SSIM over all sliding patches; symmetric in its arguments."""
    return float(ssim_map(a, b, config).mean())


def ssim_gradient(sl, sr, config=SsimConfig()):
    """Gradient of ``ssim(sl, sr)`` with respect to every entry of ``sl``."""
    x, y = _pair(sl, sr)
    w = _window(x.shape, config)
    n = w * w
    mu_x, mu_y, var_x, var_y, cov = _ssim_stats(x, y, w)
    a1 = 2 * mu_x * mu_y + config.C1
    b1 = mu_x * mu_x + mu_y * mu_y + config.C1
    a2 = 2 * cov + config.C2
    b2 = var_x + var_y + config.C2
    lum = a1 / b1
    con = a2 / b2
    # d s / d x_k = dmu * (1/n) + dcov * (y_k - mu_y)/n + dvar * 2 (x_k - mu_x)/n
    dmu = 2 * (mu_y * b1 - mu_x * a1) / (b1 * b1) * con
    dcov = lum * 2 / b2
    dvar = -lum * a2 / (b2 * b2)
    scale = 1.0 / (n * mu_x.size)
    beta = dcov * scale
    gamma = 2 * dvar * scale
    const = dmu * scale - beta * mu_y - gamma * mu_x
    shape = x.shape
    return (
        _box_adjoint(const, w, shape)
        + x * _box_adjoint(gamma, w, shape)
        + y * _box_adjoint(beta, w, shape)
    )


def shape_learning_loss(learnable, reference, gamma, config=SsimConfig()):
    """Negative weighted sum of SSIM over every (learnable, reference) pair."""
    L, R = _grids(learnable), _grids(reference)
    if len(L) != len(R):
        raise ValueError(f"cardinality mismatch: {len(L)} learnable vs {len(R)} reference shapes")
    if gamma == 0:
        return 0.0
    total = sum(ssim(sl, sr, config) for sl in L for sr in R)
    return -gamma * total


def shape_learning_gradient(learnable, reference, gamma, config=SsimConfig()):
    """Gradient of :func:`shape_learning_loss` w.r.t. the learnable stack."""
    L, R = _grids(learnable), _grids(reference)
    if len(L) != len(R):
        raise ValueError(f"cardinality mismatch: {len(L)} learnable vs {len(R)} reference shapes")
    out = np.zeros(L.shape)
    if gamma == 0:
        return out
    for i, sl in enumerate(L):
        for sr in R:
            out[i] -= gamma * ssim_gradient(sl, sr, config)
    return out


def _grids(s):
    if isinstance(s, ShapeSet):
        return s.grids
    g = np.asarray(s, dtype=np.float64)
    return g[None] if g.ndim == 2 else g


# ---------------------------------------------------------------------------
# complex steerable pyramid and CW-SSIM


def _polar_grid(shape):
    """Radial frequency in [0, pi*sqrt(2)] and angle for a centred spectrum."""
    H, W = shape
    fr = (np.arange(H) - H // 2) / (H / 2.0) * np.pi
    fc = (np.arange(W) - W // 2) / (W / 2.0) * np.pi
    rr, cc = np.meshgrid(fr, fc, indexing="ij")
    rad = np.hypot(rr, cc)
    angle = np.arctan2(rr, cc)
    return rad, angle


def _highpass(rad):
    # raised-cosine transition in log2 frequency between pi/4 and pi/2
    r = np.maximum(rad, 1e-12)
    t = np.clip(np.log2(2 * r / np.pi), -1.0, 0.0)
    return np.cos(-np.pi / 2 * t) * (rad > np.pi / 4)


def _lowpass(rad):
    return np.sqrt(np.clip(1.0 - _highpass(rad) ** 2, 0.0, 1.0))


def _angle_mask(angle, b, K):
    order = K - 1
    const = 2 ** (2 * order) * factorial(order) ** 2 / (K * factorial(2 * order))
    d = np.mod(angle - np.pi * b / K + np.pi, 2 * np.pi) - np.pi
    return 2 * np.sqrt(const) * np.cos(d) ** order * (np.abs(d) < np.pi / 2)


def complex_wavelet_coeffs(shape, config=CwSsimConfig()):
    """Oriented complex subbands of a steerable pyramid.

    Returns a list of ``levels`` lists, each holding ``orientations``
    complex arrays.  Level ``l`` bands have roughly ``side / 2**l`` rows.
    The pyramid is built in the Fourier domain; each band keeps only the
    half-plane of its orientation, so the coefficients are analytic and
    carry phase.
    """
    x = np.asarray(shape, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("shape must be 2-D")
    if min(x.shape) < 2**config.levels:
        raise ValueError(
            f"shape {x.shape} too small for {config.levels} pyramid levels"
        )
    K = config.orientations
    dft = np.fft.fftshift(np.fft.fft2(x))
    rad, angle = _polar_grid(dft.shape)
    lo = dft * _lowpass(rad / 2)
    phase = (-1j) ** (K - 1)
    bands = []
    for _ in range(config.levels):
        rad, angle = _polar_grid(lo.shape)
        hi = lo * _highpass(rad)
        level = []
        for b in range(K):
            banddft = phase * hi * _angle_mask(angle, b, K)
            level.append(np.fft.ifft2(np.fft.ifftshift(banddft)))
        bands.append(level)
        lo = lo * _lowpass(rad)
        dims = np.array(lo.shape)
        start = (np.ceil((dims + 0.5) / 2) - np.ceil((np.ceil((dims - 0.5) / 2) + 0.5) / 2)).astype(int)
        stop = (start + np.ceil((dims - 0.5) / 2)).astype(int)
        lo = lo[start[0] : stop[0], start[1] : stop[1]] / 2.0
    return bands


def _band_index(cx, cy, K, w):
    w = min(w, cx.shape[0], cx.shape[1])
    cross = sliding_window_view(cx * np.conj(cy), (w, w)).sum(axis=(-2, -1))
    ex = sliding_window_view((cx * np.conj(cx)).real, (w, w)).sum(axis=(-2, -1))
    ey = sliding_window_view((cy * np.conj(cy)).real, (w, w)).sum(axis=(-2, -1))
    return (2 * np.abs(cross) + K) / (ex + ey + K)


def cw_ssim(a, b, config=CwSsimConfig()):
    """Complex-wavelet SSIM averaged over windows and all oriented subbands."""
    a, b = _pair(a, b)
    ca = complex_wavelet_coeffs(a, config)
    cb = complex_wavelet_coeffs(b, config)
    scores = [
        _band_index(x, y, config.K, config.window_size).mean()
        for la, lb in zip(ca, cb)
        for x, y in zip(la, lb)
    ]
    return float(np.mean(scores))


def similarity_matrix(shapes, config=CwSsimConfig()):
    """Pairwise CW-SSIM matrix of a shape stack."""
    g = _grids(shapes)
    n = len(g)
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = cw_ssim(g[i], g[j], config)
    return m


def eliminate_shapes(expert, threshold=0.8, config=CwSsimConfig(), matrix=None):
    """Greedy redundancy pruning of an expert shape set.

    Repeatedly takes the first remaining shape, groups it with every other
    remaining shape whose CW-SSIM against it exceeds ``threshold``, keeps
    the first shape of the group as its representative and removes the
    group.  Returns the representatives as a ``reference`` ShapeSet.

    ``matrix`` may carry a precomputed :func:`similarity_matrix`.
    """
    g = _grids(expert)
    if len(g) == 0:
        raise ValueError("expert shape set is empty")
    remaining = list(range(len(g)))
    reps = []
    while remaining:
        pivot = remaining[0]
        group = [pivot]
        for j in remaining[1:]:
            c = matrix[pivot, j] if matrix is not None else cw_ssim(g[pivot], g[j], config)
            if c > threshold:
                group.append(j)
        reps.append(pivot)
        remaining = [j for j in remaining if j not in group]
    return ShapeSet(g[reps], kind="reference")


# ---------------------------------------------------------------------------
# I/O


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_shape_set(directory, kind="expert"):
    """Load one shape per image file, in filename order.

    Pixel values are scaled to [0, 1]; expert and reference shapes are
    binarised at 0.5.
    """
    files = list_images(directory)
    if not files:
        raise ValueError(f"no shape images in {directory}")
    grids = []
    for f in files:
        with Image.open(f) as im:
            a = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        grids.append(a)
    sides = {a.shape for a in grids}
    if len(sides) != 1:
        raise ValueError(f"shapes in {directory} differ in size: {sorted(sides)}")
    g = np.stack(grids)
    if kind != "learnable":
        g = (g >= 0.5).astype(np.float64)
    return ShapeSet(g, kind=kind)


def save_shape_set(shapes, directory, prefix="shape"):
    """Write each shape as an 8-bit PNG (values clipped to [0, 1])."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(_grids(shapes)):
        p = d / f"{prefix}_{i:03d}.png"
        a = np.round(np.clip(s, 0.0, 1.0) * 255).astype(np.uint8)
        Image.fromarray(a, mode="L").save(p)
        paths.append(p)
    return paths
