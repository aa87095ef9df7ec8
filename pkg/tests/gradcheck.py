"""Central finite-difference oracle for the full training objective.

Entries whose +/-h perturbation changes a ReLU pattern, the pre-pool
threshold mask, a pooling route or (for the weighted data term) the
detections are skipped: the objective has a kink
there and a difference quotient straddling it is not a derivative.
"""
import numpy as np

from shapeprior.detection import DetectionConfig, detect
from shapeprior.network import _forward_cache, loss_and_gradients, total_loss
from shapeprior.numerics import max_pool_same


def _pattern(x, params, hyper):
    yhat, (_, pre) = _forward_cache(x, params)
    sig = [z > 0 for z in pre[:-1]]
    keep = yhat >= hyper.pool_threshold
    _, route = max_pool_same(np.where(keep, yhat, 0.0), hyper.pool)
    out = sig + [keep, route.argmax_index]
    if hyper.weighted:
        cfg = DetectionConfig(hyper.detect_threshold, max(1, int(round(hyper.golden_radius))))
        out += [detect(y, cfg) for y in yhat]
    return out


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def rel_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def check(x, y, edge, params, hyper, shapes=None, reference=None, centers=None, h=1e-4):
    """Return (worst relative error, entries checked, entries skipped)."""
    _, grads = loss_and_gradients(x, y, edge, params, hyper, shapes, reference, centers)
    base = _pattern(x, params, hyper)

    def f():
        return total_loss(x, y, edge, params, hyper, shapes, reference, centers)

    groups = [(params.weights, grads.weights), (params.biases, grads.biases)]
    if params.shapes is not None:
        groups.append(([params.shapes], [grads.shapes]))
    worst, checked, skipped = 0.0, 0, 0
    for arrays, garrays in groups:
        for a, g in zip(arrays, garrays):
            for idx in np.ndindex(a.shape):
                old = a[idx]
                a[idx] = old + h
                fp, pp = f(), _pattern(x, params, hyper)
                a[idx] = old - h
                fm, pm = f(), _pattern(x, params, hyper)
                a[idx] = old
                if not (_same(pp, base) and _same(pm, base)):
                    skipped += 1
                    continue
                checked += 1
                worst = max(worst, rel_error(g[idx], (fp - fm) / (2 * h)))
    return worst, checked, skipped
