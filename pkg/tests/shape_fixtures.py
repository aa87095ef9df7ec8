"""Shape fixtures shared by the similarity and pruning tests (side 20)."""
import numpy as np

from shapeprior.synthetic import ellipse_boundary, l_boundary, rect_boundary

SIDE = 20


def disk():
    return ellipse_boundary(SIDE, 7, 7)


def ladder():
    """Disk outline and four variants of decreasing resemblance."""
    return disk(), [
        ellipse_boundary(SIDE, 7, 6.5),  # very similar
        ellipse_boundary(SIDE, 7, 5),  # similar
        ellipse_boundary(SIDE, 7, 4),  # different
        rect_boundary(SIDE, 8, 2),  # very different: thin bar
    ]


def shifted_pair():
    d = disk()
    return d, np.roll(d, 1, axis=1)


def dissimilar_set():
    """Disk, square, bar and L outlines; pairwise CW-SSIM well below 0.8."""
    return np.stack([disk(), rect_boundary(SIDE, 6, 6), rect_boundary(SIDE, 8, 2), l_boundary(SIDE)])


def two_group_set():
    """Six shapes in two groups (disk-like, bar-like), interleaved."""
    d = disk()
    bar = rect_boundary(SIDE, 8, 2)
    return np.stack([
        d, bar,
        ellipse_boundary(SIDE, 7, 6.5), np.roll(bar, 1, axis=1),
        np.roll(d, 1, axis=1), np.roll(bar, 1, axis=0),
    ])
