"""Training tuples (image, edge map, label map): synthesis, patching, I/O."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .edges import CannyConfig, canny
from .numerics import gaussian_kernel

IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".bmp", ".pgm", ".jpg", ".jpeg")


@dataclass
class TrainingTuple:
    """Aligned patches of the image, its edge map and its label map.

    ``centers`` holds the annotated centres falling inside the patch, in
    patch coordinates; the weighted-loss baseline needs them.
    """

    x: np.ndarray
    x_edge: np.ndarray
    y: np.ndarray
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __post_init__(self):
        if not (self.x.shape == self.x_edge.shape == self.y.shape):
            raise ValueError(
                f"misaligned tuple: x {self.x.shape}, edge {self.x_edge.shape}, y {self.y.shape}"
            )


@dataclass
class Sample:
    """A full image with its annotations (and edge map, for training images)."""

    name: str
    image: np.ndarray
    centers: np.ndarray
    edges: np.ndarray | None = None


def _centers_array(centers):
    c = np.asarray(centers, dtype=int).reshape(-1, 2)
    return c


def synth_labels(centers, height, width, sigma=2.0, ksize=7):
    """Soft label map with a peak-normalised Gaussian stamped at each centre.

    Overlapping stamps combine by elementwise maximum, so the map stays in
    [0, 1] and equals 1 exactly at every centre.
    """
    c = _centers_array(centers)
    for r, col in c:
        if not (0 <= r < height and 0 <= col < width):
            raise ValueError(f"center ({r}, {col}) outside a {height}x{width} image")
    k = gaussian_kernel(sigma, ksize)
    h = ksize // 2
    y = np.zeros((height + 2 * h, width + 2 * h))
    for r, col in c:
        win = y[r : r + ksize, col : col + ksize]
        np.maximum(win, k, out=win)
    return y[h : h + height, h : h + width].copy()


def extract_patches(x, x_edge, y, patch=40, stride=20, centers=None):
    """Cut aligned patch triples on a regular grid (row-major order)."""
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape
    if H < patch or W < patch:
        raise ValueError(f"image {x.shape} smaller than patch size {patch}")
    if stride < 1:
        raise ValueError("stride must be positive")
    c = _centers_array(centers if centers is not None else [])
    out = []
    for r0 in range(0, H - patch + 1, stride):
        for c0 in range(0, W - patch + 1, stride):
            sl = (slice(r0, r0 + patch), slice(c0, c0 + patch))
            inside = (
                (c[:, 0] >= r0) & (c[:, 0] < r0 + patch) & (c[:, 1] >= c0) & (c[:, 1] < c0 + patch)
            )
            local = c[inside] - np.array([r0, c0])
            out.append(TrainingTuple(x[sl].copy(), x_edge[sl].copy(), y[sl].copy(), local))
    return out


def filter_void(tuples, min_peak=0.5):
    """Drop tuples whose label patch holds no annotated centre."""
    return [t for t in tuples if t.y.max() >= min_peak]


def stack_tuples(tuples):
    """Stack tuples into (n, h, w) arrays plus the list of centre arrays."""
    if not tuples:
        raise ValueError("no training tuples")
    X = np.stack([t.x for t in tuples])
    E = np.stack([t.x_edge for t in tuples])
    Y = np.stack([t.y for t in tuples])
    return X, E, Y, [t.centers for t in tuples]


# ---------------------------------------------------------------------------
# file formats


def read_image(path):
    """Read an 8-bit image as luminance in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_image(path, a):
    a = np.round(np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(a, mode="L").save(path)


def read_centers(path):
    """Read a ``row,col`` CSV (optional header line) into an (n, 2) int array."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a, _, b = line.partition(",")
        try:
            rows.append((int(float(a)), int(float(b))))
        except ValueError:
            if rows:
                raise ValueError(f"{path}: malformed line {line!r}") from None
            # header line
            continue
    c = np.array(rows, dtype=int).reshape(-1, 2)
    if len({tuple(r) for r in c}) != len(c):
        raise ValueError(f"{path}: duplicate centers")
    return c


def write_centers(path, centers):
    c = _centers_array(centers)
    lines = ["row,col"] + [f"{r},{col}" for r, col in c]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalue(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ValueError(f"{path}:{n}: duplicate key {k!r}")
        out[k] = v
    return out


@dataclass
class Manifest:
    image_dir: Path
    annotation_dir: Path
    split: tuple = (50, 50)
    seed: int = 0
    shape_dir: Path | None = None

    @classmethod
    def read(cls, path):
        kv = read_keyvalue(path)
        base = Path(path).parent
        known = {"image_dir", "annotation_dir", "split", "seed", "shape_dir"}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"{path}: unknown manifest keys {sorted(unknown)}")
        for k in ("image_dir", "annotation_dir"):
            if k not in kv:
                raise ValueError(f"{path}: missing key {k!r}")
        split = tuple(int(s) for s in kv.get("split", "50-50").split("-"))
        if len(split) != 2 or min(split) < 0 or sum(split) == 0:
            raise ValueError(f"{path}: split must look like '50-50', got {kv.get('split')!r}")
        shape_dir = base / kv["shape_dir"] if "shape_dir" in kv else None
        return cls(
            base / kv["image_dir"], base / kv["annotation_dir"], split, int(kv.get("seed", 0)), shape_dir
        )

    def write(self, path):
        base = Path(path).parent
        lines = [
            f"image_dir = {_rel(self.image_dir, base)}",
            f"annotation_dir = {_rel(self.annotation_dir, base)}",
            f"split = {self.split[0]}-{self.split[1]}",
            f"seed = {self.seed}",
        ]
        if self.shape_dir is not None:
            lines.append(f"shape_dir = {_rel(self.shape_dir, base)}")
        Path(path).write_text("\n".join(lines) + "\n")


def _rel(p, base):
    try:
        return Path(p).resolve().relative_to(Path(base).resolve()).as_posix()
    except ValueError:
        return str(Path(p).resolve())


def split_sizes(n, split):
    """Sizes of the train/test partition for ``n`` items and an ``a-b`` ratio."""
    a, b = split
    n_train = int(round(n * a / (a + b)))
    return n_train, n - n_train


def load_dataset(image_dir, annotation_dir, canny_config=CannyConfig(), split=(50, 50), seed=0):
    """Load images and annotations and split them into train and test samples.

    Files are paired by stem (``img_007.png`` with ``img_007.csv``).  The
    split shuffles the sorted filenames with ``seed``; each partition is
    returned in sorted-name order.  Edge maps are computed for training
    images only.
    """
    images = sorted(p for p in Path(image_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise ValueError(f"no images in {image_dir}")
    missing = [p.name for p in images if not (Path(annotation_dir) / f"{p.stem}.csv").exists()]
    if missing:
        raise FileNotFoundError(f"missing annotations for: {', '.join(missing)}")
    n_train, _ = split_sizes(len(images), split)
    order = np.random.default_rng(seed).permutation(len(images))
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())

    def sample(i, with_edges):
        p = images[i]
        img = read_image(p)
        c = read_centers(Path(annotation_dir) / f"{p.stem}.csv")
        e = canny(img, canny_config) if with_edges else None
        return Sample(p.stem, img, c, e)

    train = [sample(i, True) for i in train_idx]
    test = [sample(i, False) for i in test_idx]
    return train, test


def training_tuples(samples, patch=40, stride=20, sigma=2.0, ksize=7):
    """Label synthesis, patch extraction and void filtering for training samples."""
    out = []
    for s in samples:
        y = synth_labels(s.centers, *s.image.shape, sigma=sigma, ksize=ksize)
        edges = s.edges if s.edges is not None else canny(s.image)
        out.extend(extract_patches(s.image, edges, y, patch, stride, s.centers))
    return filter_void(out)
