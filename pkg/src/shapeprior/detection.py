"""Peak detection on label maps and golden-region evaluation."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DetectionConfig:
    threshold: float = 0.5
    nms_radius: int = 6

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.nms_radius < 1:
            raise ValueError(f"nms_radius must be >= 1, got {self.nms_radius}")


@dataclass(frozen=True)
class EvalConfig:
    golden_radius: float = 6.0

    def __post_init__(self):
        if not self.golden_radius >= 1:
            raise ValueError(f"golden_radius must be >= 1, got {self.golden_radius}")


@dataclass(frozen=True)
class MatchReport:
    tp: int
    fp: int
    fn: int
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")

    @property
    def n_detections(self):
        return self.tp + self.fp

    @property
    def n_truth(self):
        return self.tp + self.fn


def detect(yhat, config=DetectionConfig()):
    """Centres of thresholded local maxima of a label map.

    The map is clamped to [0, 1] and values not above ``threshold`` are
    dropped.  A surviving cell is reported when no cell in its
    ``(2r+1) x (2r+1)`` neighbourhood is larger; among equal values only
    the first in row-major order counts.

    Returns
    -------
    numpy.ndarray of int, shape (n, 2)
        (row, col) pairs in row-major order.
    """
    y = np.clip(np.asarray(yhat, dtype=np.float64), 0.0, 1.0)
    y = np.where(y > config.threshold, y, 0.0)
    H, W = y.shape
    r = int(config.nms_radius)
    p = np.pad(y, r, constant_values=-1.0)
    keep = y > 0
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            if dr == 0 and dc == 0:
                continue
            nb = p[r + dr : r + dr + H, r + dc : r + dc + W]
            earlier = dr < 0 or (dr == 0 and dc < 0)
            keep &= (nb <= y) if not earlier else (nb < y)
    return np.argwhere(keep)


def _pairs_within(detections, truth, radius):
    d = np.asarray(detections, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(d) == 0 or len(g) == 0:
        return []
    dist = np.hypot(d[:, None, 0] - g[None, :, 0], d[:, None, 1] - g[None, :, 1])
    i, j = np.nonzero(dist <= radius)
    keys = np.lexsort((g[j, 1], g[j, 0], d[i, 1], d[i, 0], dist[i, j]))
    return list(zip(i[keys].tolist(), j[keys].tolist()))


def greedy_match(detections, truth, radius):
    """One-to-one greedy matching by ascending distance.

    Returns the list of matched ``(detection_index, truth_index)`` pairs.
    Distance ties are broken by detection then truth coordinates, so the
    result does not depend on input order.
    """
    used_d, used_g, matches = set(), set(), []
    for i, j in _pairs_within(detections, truth, radius):
        if i in used_d or j in used_g:
            continue
        used_d.add(i)
        used_g.add(j)
        matches.append((i, j))
    return matches


def match_golden(detections, truth, config=EvalConfig()):
    """TP/FP/FN counts under one-to-one golden-region matching."""
    n_d = len(np.asarray(detections).reshape(-1, 2))
    n_g = len(np.asarray(truth).reshape(-1, 2))
    tp = len(greedy_match(detections, truth, config.golden_radius))
    return prf1(MatchReport(tp, n_d - tp, n_g - tp))


def prf1(counts):
    """Fill in precision, recall and F1 from TP/FP/FN counts.

    An empty detection set against an empty truth set scores 1 on every
    measure; otherwise an undefined ratio scores 0.
    """
    tp, fp, fn = int(counts.tp), int(counts.fp), int(counts.fn)
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be nonnegative")
    if tp + fp == 0 and tp + fn == 0:
        return MatchReport(tp, fp, fn, 1.0, 1.0, 1.0)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return MatchReport(tp, fp, fn, p, r, f1)


def region_masks(shape, detections, truth, radius):
    """Disks of ``radius`` around false-positive detections and missed centres.

    Returns ``(fp_mask, fn_mask)`` as boolean arrays of ``shape``.
    """
    d = np.asarray(detections, dtype=int).reshape(-1, 2)
    g = np.asarray(truth, dtype=int).reshape(-1, 2)
    matches = greedy_match(d, g, radius)
    md = {i for i, _ in matches}
    mg = {j for _, j in matches}
    fp = [d[i] for i in range(len(d)) if i not in md]
    fn = [g[j] for j in range(len(g)) if j not in mg]
    return _disks(shape, fp, radius), _disks(shape, fn, radius)


def _disks(shape, points, radius):
    mask = np.zeros(shape, dtype=bool)
    if not len(points):
        return mask
    rr, cc = np.mgrid[0 : shape[0], 0 : shape[1]]
    for r, c in points:
        mask |= (rr - r) ** 2 + (cc - c) ** 2 <= radius**2
    return mask


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def best(self):
        """(threshold, precision, recall, f1) at the first F1 maximum."""
        k = int(np.argmax(self.f1))
        return (
            float(self.thresholds[k]),
            float(self.precision[k]),
            float(self.recall[k]),
            float(self.f1[k]),
        )

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist(), self.f1.tolist()))


def default_thresholds(step=0.05):
    n = int(round(1.0 / step))
    return np.round(np.arange(n + 1) * step, 10)


def pr_curve(yhat_set, gt_set, eval_config=EvalConfig(), thresholds=None, nms_radius=None):
    """Precision/recall/F1 against the detection threshold.

    Precision and recall are averaged over images at each threshold; F1 is
    the harmonic mean of the averaged values.
    """
    yhat_set = list(yhat_set)
    gt_set = list(gt_set)
    if not yhat_set:
        raise ValueError("empty test set")
    if len(yhat_set) != len(gt_set):
        raise ValueError("prediction and ground-truth lists differ in length")
    t = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(t) < 0) or t.min() < 0 or t.max() > 1:
        raise ValueError("thresholds must be sorted ascending within [0, 1]")
    radius = int(round(eval_config.golden_radius)) if nms_radius is None else nms_radius
    P = np.zeros(len(t))
    R = np.zeros(len(t))
    for k, thr in enumerate(t):
        cfg = DetectionConfig(float(thr), radius)
        reps = [match_golden(detect(yh, cfg), gt, eval_config) for yh, gt in zip(yhat_set, gt_set)]
        P[k] = np.mean([m.precision for m in reps])
        R[k] = np.mean([m.recall for m in reps])
    with np.errstate(invalid="ignore", divide="ignore"):
        F = np.where(P + R > 0, 2 * P * R / (P + R), 0.0)
    return PRCurve(t, P, R, F)
