"""Synthetic nucleus images, centre annotations and expert-style shape sets.

Used for desk-scale experiments and tests: images are luminance in [0, 1]
with bright elliptical nuclei on a dim, unevenly lit background, plus
unlabelled debris (small specks and thin fibres) that a detector can
confuse with nuclei.
"""
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import Manifest, write_centers, write_image
from .shapes import ShapeSet, save_shape_set


def _ellipse_inside(side, a, b, theta=0.0, center=None):
    c = (side - 1) / 2.0 if center is None else center
    if np.ndim(c) == 0:
        c = (c, c)
    r, cc = np.mgrid[0:side, 0:side].astype(np.float64)
    y, x = r - c[0], cc - c[1]
    ct, st = np.cos(theta), np.sin(theta)
    u = x * ct + y * st
    v = -x * st + y * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _outline(inside):
    return (inside & ~ndimage.binary_erosion(inside)).astype(np.float64)


def ellipse_boundary(side, a, b, theta=0.0, center=None):
    """One-pixel binary outline of an ellipse with semi-axes ``a`` (cols) and ``b`` (rows)."""
    return _outline(_ellipse_inside(side, a, b, theta, center))


def rect_boundary(side, half_h, half_w, center=None):
    """One-pixel binary outline of an axis-aligned rectangle."""
    c = (side - 1) / 2.0 if center is None else center
    if np.ndim(c) == 0:
        c = (c, c)
    r, cc = np.mgrid[0:side, 0:side].astype(np.float64)
    inside = (np.abs(r - c[0]) <= half_h) & (np.abs(cc - c[1]) <= half_w)
    return _outline(inside)


def l_boundary(side, arm=3):
    """Outline of an L-shaped block filling most of the grid."""
    inside = np.zeros((side, side), dtype=bool)
    lo, hi = side // 6, side - side // 6
    inside[lo:hi, lo : lo + arm] = True
    inside[hi - arm : hi, lo:hi] = True
    return _outline(inside)


def expert_shape_set(side=20, seed=0):
    """24 nucleus outlines: 8 prototypes, each with two near-duplicates.

    The near-duplicates differ from their prototype by a one-pixel shift
    or a half-pixel change of one semi-axis, the kind of redundancy a
    hand-drawn expert set carries.
    """
    rng = np.random.default_rng(seed)
    s = side / 20.0
    protos = [
        (6.0, 6.0, 0.0),
        (4.5, 4.5, 0.0),
        (7.0, 4.5, 0.0),
        (7.0, 4.5, np.pi / 2),
        (7.0, 4.5, np.pi / 4),
        (7.0, 4.5, 3 * np.pi / 4),
        (8.0, 3.0, 0.0),
        (8.0, 3.0, np.pi / 2),
    ]
    grids = []
    c0 = (side - 1) / 2.0
    for a, b, t in protos:
        a, b = a * s, b * s
        grids.append(ellipse_boundary(side, a, b, t))
        dr, dc = rng.choice([-1, 1], size=2)
        grids.append(ellipse_boundary(side, a, b, t, center=(c0 + dr, c0 + dc)))
        grids.append(ellipse_boundary(side, a + 0.5, b, t))
    return ShapeSet(np.stack(grids), kind="expert")


def _smooth_noise(rng, shape, sigma, amp):
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return amp * n / (n.std() + 1e-12)


def synth_image(rng, size=128, n_range=(10, 25), axes=(4.0, 6.5), min_dist=9.0,
                noise=0.04, n_debris=(3, 8)):
    """One synthetic image and its (n, 2) array of nucleus centres."""
    H = W = size
    img = 0.12 + _smooth_noise(rng, (H, W), 12, 0.03)
    n_target = int(rng.integers(n_range[0], n_range[1] + 1))
    centers = []
    margin = 3
    tries = 0
    while len(centers) < n_target and tries < 5000:
        tries += 1
        p = rng.uniform(margin, size - 1 - margin, size=2)
        if any(np.hypot(*(p - q)) < min_dist for q in centers):
            continue
        centers.append(p)
    rr, cc = np.mgrid[0:H, 0:W].astype(np.float64)
    nuclei = np.zeros((H, W))
    texture = _smooth_noise(rng, (H, W), 1.2, 1.0)
    for p in centers:
        a = rng.uniform(*axes)
        b = a * rng.uniform(0.6, 1.0)
        t = rng.uniform(0, np.pi)
        amp = rng.uniform(0.35, 0.75)
        y, x = rr - p[0], cc - p[1]
        u = x * np.cos(t) + y * np.sin(t)
        v = -x * np.sin(t) + y * np.cos(t)
        rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        body = 1.0 / (1.0 + np.exp((rho - 1.0) * min(a, b) / 0.7))
        nuclei = np.maximum(nuclei, amp * body * (1.0 + 0.12 * texture))
    debris = np.zeros((H, W))
    for _ in range(int(rng.integers(n_debris[0], n_debris[1] + 1))):
        p = rng.uniform(0, size, size=2)
        amp = rng.uniform(0.3, 0.7)
        if rng.random() < 0.5:
            r0 = rng.uniform(1.2, 2.2)
            d = np.hypot(rr - p[0], cc - p[1])
            debris = np.maximum(debris, amp / (1.0 + np.exp((d - r0) / 0.5)))
        else:
            t = rng.uniform(0, np.pi)
            length = rng.uniform(12, 28)
            y, x = rr - p[0], cc - p[1]
            u = x * np.cos(t) + y * np.sin(t)
            v = -x * np.sin(t) + y * np.cos(t)
            d = np.maximum(np.abs(v), np.maximum(np.abs(u) - length / 2, 0.0))
            debris = np.maximum(debris, amp / (1.0 + np.exp((d - 1.0) / 0.5)))
    img = img + np.maximum(nuclei, debris) + noise * rng.standard_normal((H, W))
    c = np.round(np.array(centers)).astype(int).reshape(-1, 2)
    c = np.unique(np.clip(c, 0, size - 1), axis=0)
    return np.clip(img, 0.0, 1.0), c


def write_dataset(out_dir, n_images=60, size=128, seed=0, shape_side=20, split=(50, 50)):
    """Write images, annotations, an expert shape set and a manifest.

    Layout::

        out_dir/images/img_000.png       8-bit luminance
        out_dir/annotations/img_000.csv  row,col per centre
        out_dir/shapes/shape_000.png     expert outlines
        out_dir/manifest.txt
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    for i in range(n_images):
        img, c = synth_image(rng, size=size)
        write_image(out / "images" / f"img_{i:03d}.png", img)
        write_centers(out / "annotations" / f"img_{i:03d}.csv", c)
    save_shape_set(expert_shape_set(shape_side, seed), out / "shapes")
    m = Manifest(out / "images", out / "annotations", tuple(split), seed, out / "shapes")
    m.write(out / "manifest.txt")
    return out / "manifest.txt"
