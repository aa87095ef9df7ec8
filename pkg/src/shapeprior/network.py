"""Regression CNN for nucleus-centre maps, its regularised objective and training.

Layout
------
Layer 1 maps 1 -> C channels with a ``first_kernel`` square kernel, layers
2..D-1 map C -> C with ``mid_kernel`` kernels, layer D maps C -> 1 with a
``mid_kernel`` kernel.  ReLU follows every layer but the last.  All layers
use zero 'same' padding and true convolution (see :mod:`.numerics`).

Objective
---------
For a minibatch of B patches the objective is

    mean_b ||yhat_b - y_b||^2                      (data term)
  - lam * mean_b sum_q ||(pool(thr(yhat_b)) * edge_b) (*) S_q||^2   (shape prior)
  - gamma * sum_i sum_j ssim(S_i, R_j)             (shape learning)

where ``thr`` zeroes values below ``pool_threshold``, ``pool`` is a stride-1
max pool, ``(*)`` is full 2-D convolution and ``R`` the reference set.  All
gradients are exact derivatives of this expression; the threshold mask is
held fixed within a pass.
"""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .detection import DetectionConfig, detect, region_masks
from .numerics import conv2d_full, correlate_valid, max_pool_same, route_gradient
from .shapes import SsimConfig, shape_learning_gradient, shape_learning_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 7
    channels: int = 64
    first_kernel: int = 5
    mid_kernel: int = 3

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        for k in (self.first_kernel, self.mid_kernel):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd, got {k}")

    def layer_shapes(self):
        """Weight shapes (out, in, k, k) for every layer."""
        C, k1, k = self.channels, self.first_kernel, self.mid_kernel
        shapes = [(C, 1, k1, k1)]
        shapes += [(C, C, k, k)] * (self.depth - 2)
        shapes.append((1, C, k, k))
        return shapes


@dataclass
class NetworkParams:
    weights: list
    biases: list
    shapes: np.ndarray | None = None

    def copy(self):
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.shapes is None else self.shapes.copy(),
        )

    def check(self, config):
        expected = config.layer_shapes()
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise ValueError(
                f"params hold {len(self.weights)} layers, config expects {len(expected)}"
            )
        for l, (w, b, s) in enumerate(zip(self.weights, self.biases, expected), 1):
            if w.shape != s or b.shape != (s[0],):
                raise ValueError(f"layer {l}: weight {w.shape} / bias {b.shape} do not match {s}")


@dataclass
class HyperParams:
    lam: float = 0.0
    gamma: float = 0.0
    pool: int = 11
    pool_threshold: float = 0.2
    eta: float = 1e-3
    weight_decay: float = 1e-5
    lr_decay: float = 0.75
    lr_decay_every: int = 10
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    # weighted data term (false-positive / false-negative regions)
    weighted: bool = False
    w_fp: float = 0.7
    w_fn: float = 0.3
    golden_radius: float = 6.0
    detect_threshold: float = 0.5

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be nonnegative")
        if not 0 <= self.pool_threshold < 1:
            raise ValueError("pool_threshold must lie in [0, 1)")
        if self.pool < 1 or self.pool % 2 == 0:
            raise ValueError("pool window must be a positive odd integer")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_decay_every < 1:
            raise ValueError("batch_size and lr_decay_every must be positive, epochs nonnegative")
        _check_weights(self.w_fp, self.w_fn)


@dataclass
class Gradients:
    weights: list
    biases: list
    shapes: np.ndarray | None = None


@dataclass
class LossComponents:
    data: float
    shape_prior: float
    shape_learning: float
    total: float


def init_params(config, seed=0, shapes=None):
    """Zero-mean Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for s in config.layer_shapes():
        fan_in = s[1] * s[2] * s[3]
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=s))
        biases.append(np.zeros(s[0]))
    sh = None if shapes is None else np.array(_shape_grids(shapes), dtype=np.float64)
    return NetworkParams(weights, biases, sh)


def _shape_grids(shapes):
    g = getattr(shapes, "grids", shapes)
    g = np.asarray(g, dtype=np.float64)
    return g[None] if g.ndim == 2 else g


# ---------------------------------------------------------------------------
# layers


def _im2col(a, k):
    """Patches of a zero-padded channels-last stack as rows of (k*k*C) values.

    Row order is (b, i, j); within a row values run over (u, v, c), so each
    kernel row is one contiguous slice of the padded input.
    """
    B, H, W, C = a.shape
    r = k // 2
    ap = np.pad(a, ((0, 0), (r, r), (r, r), (0, 0)))
    sb, sh, sw, sc = ap.strides
    cols = as_strided(ap, (B, H, W, k, k, C), (sb, sh, sw, sh, sw, sc), writeable=False)
    return cols.reshape(B * H * W, k * k * C)


def _conv(a, w, b):
    """Multi-channel true convolution; a (B, H, W, C), w (O, C, k, k)."""
    B, H, W, _ = a.shape
    O, C, k, _ = w.shape
    wm = w[:, :, ::-1, ::-1].transpose(2, 3, 1, 0).reshape(k * k * C, O)
    return (_im2col(a, k) @ wm).reshape(B, H, W, O) + b


def _conv_backward(a, w, dout, need_input=True):
    B, H, W, _ = a.shape
    O, C, k, _ = w.shape
    d2 = dout.reshape(B * H * W, O)
    dwm = _im2col(a, k).T @ d2  # (k*k*C, O), flipped kernel layout
    dw = dwm.reshape(k, k, C, O).transpose(3, 2, 0, 1)[:, :, ::-1, ::-1]
    db = d2.sum(axis=0)
    da = None
    if need_input:
        wa = w.transpose(2, 3, 0, 1).reshape(k * k * O, C)
        da = (_im2col(dout, k) @ wa).reshape(B, H, W, C)
    return np.ascontiguousarray(dw), db, da


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"expected (H, W) or (B, H, W) input, got shape {x.shape}")


def _forward_cache(x, params):
    a = x[..., None]
    inputs, pre = [], []
    L = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases), 1):
        if a.shape[-1] != w.shape[1]:
            raise ValueError(f"layer {l}: input has {a.shape[-1]} channels, weights expect {w.shape[1]}")
        inputs.append(a)
        with np.errstate(over="ignore", invalid="ignore"):
            z = _conv(a, w, b)
        if not np.all(np.isfinite(z)):
            raise TrainingError(f"non-finite activation at layer {l}")
        pre.append(z)
        a = np.maximum(z, 0.0) if l < L else z
    return a[..., 0], (inputs, pre)


def forward(x, params, config=None):
    """Network output for an image (H, W) or a stack (B, H, W).

    Only the image and the weights are consulted; shape sets carried by
    ``params`` play no part in inference.
    """
    xb, single = _as_batch(x)
    if config is not None:
        params.check(config)
    yhat, _ = _forward_cache(xb, NetworkParams(params.weights, params.biases))
    return yhat[0] if single else yhat


# ---------------------------------------------------------------------------
# loss terms; batched inputs (B, H, W) are averaged over B


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def mse_loss(yhat, y):
    """Sum of squared differences (mean over a leading batch axis)."""
    yh, _ = _as_batch(yhat)
    yy, _ = _as_batch(y)
    _same_shape(yh, yy, "mse_loss")
    return float(((yh - yy) ** 2).sum(axis=(1, 2)).mean())


def _check_weights(w_fp, w_fn):
    if not (0 <= w_fp <= 1 and 0 <= w_fn <= 1):
        raise ValueError(f"weights must lie in [0, 1], got {w_fp}, {w_fn}")
    if abs(w_fp + w_fn - 1) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w_fp} + {w_fn}")


def weighted_mse_from_masks(yhat, y, fp_mask, fn_mask, w_fp=0.7, w_fn=0.3):
    """Squared error restricted to false-positive and false-negative regions."""
    _check_weights(w_fp, w_fn)
    yh, _ = _as_batch(yhat)
    yy, _ = _as_batch(y)
    _same_shape(yh, yy, "weighted_mse")
    wmap = w_fp * np.asarray(fp_mask, dtype=np.float64) + w_fn * np.asarray(fn_mask, dtype=np.float64)
    wmap = np.broadcast_to(wmap.reshape((-1,) + yh.shape[1:]), yh.shape)
    return float((wmap * (yh - yy) ** 2).sum(axis=(1, 2)).mean())


def weighted_mse_loss(yhat, y, detections, gt_centers, w_fp=0.7, w_fn=0.3, golden_radius=6.0):
    """Weighted data term for a single map.

    Unmatched detections and missed centres (golden-region matching) are
    dilated into disks of ``golden_radius``; squared error inside the
    false-positive disks is weighted by ``w_fp``, inside the
    false-negative disks by ``w_fn``.  Error elsewhere does not count.
    """
    _check_weights(w_fp, w_fn)
    yhat = np.asarray(yhat, dtype=np.float64)
    fp, fn = region_masks(yhat.shape, detections, gt_centers, golden_radius)
    return weighted_mse_from_masks(yhat, y, fp, fn, w_fp, w_fn)


def _shape_prior_forward(yhat, edge, shapes, p, t_p):
    keep = yhat >= t_p
    pooled, route = max_pool_same(np.where(keep, yhat, 0.0), p)
    masked = pooled * edge
    resp = conv2d_full(masked, shapes)  # (B, Q, H', W')
    energy = (resp**2).sum(axis=(1, 2, 3))
    return energy, (keep, route, masked, resp)


def shape_prior_loss(yhat, edge, shapes, lam, p=11, t_p=0.2):
    """Shape-prior regulariser.

    Thresholds ``yhat`` at ``t_p``, max-pools it over a ``p x p`` window,
    masks the edge map with the result, convolves the masked edges with
    every shape and returns ``-lam`` times the summed squared responses.
    Detections surrounded by shape-like edges drive the value down.
    """
    yh, _ = _as_batch(yhat)
    e, _ = _as_batch(edge)
    _same_shape(yh, e, "shape_prior_loss")
    s = _shape_grids(shapes)
    if len(s) == 0:
        raise ValueError("shape set is empty")
    if lam == 0:
        return 0.0
    energy, _ = _shape_prior_forward(yh, e, s, p, t_p)
    return float(-lam * energy.mean())


def _prior_shapes(params, shapes):
    return params.shapes if params.shapes is not None else (None if shapes is None else _shape_grids(shapes))


def _validate_objective(params, hyper, shapes, reference):
    if hyper.gamma > 0:
        if params.shapes is None:
            raise ValueError("gamma > 0 requires learnable shapes in params")
        if reference is None:
            raise ValueError("gamma > 0 requires a reference shape set")
        if len(_shape_grids(reference)) != len(params.shapes):
            raise ValueError("learnable and reference sets differ in size")
    if hyper.lam > 0 and _prior_shapes(params, shapes) is None:
        raise ValueError("lam > 0 requires a shape set")


def _data_term(yhat, y, hyper, centers):
    if not hyper.weighted:
        d = yhat - y
        return float((d**2).sum(axis=(1, 2)).mean()), 2.0 * d / len(y)
    wmap = np.zeros(y.shape)
    cfg = DetectionConfig(hyper.detect_threshold, max(1, int(round(hyper.golden_radius))))
    for b in range(len(y)):
        fp, fn = region_masks(y.shape[1:], detect(yhat[b], cfg), centers[b], hyper.golden_radius)
        wmap[b] = hyper.w_fp * fp + hyper.w_fn * fn
    d = yhat - y
    return float((wmap * d**2).sum(axis=(1, 2)).mean()), 2.0 * wmap * d / len(y)


def loss_and_gradients(x, y, edge, params, hyper, shapes=None, reference=None, centers=None,
                       ssim_config=SsimConfig(), need_grad=True):
    """Objective value, its components and (optionally) all gradients.

    ``shapes`` is the fixed prior set used when ``params`` carries no
    learnable shapes; ``reference`` anchors learnable shapes when
    ``hyper.gamma > 0``.  ``centers`` (per-patch centre arrays) is needed
    only for the weighted data term.
    """
    xb, _ = _as_batch(x)
    yb, _ = _as_batch(y)
    _same_shape(xb, yb, "input/label")
    _validate_objective(params, hyper, shapes, reference)
    B = len(xb)
    yhat, (inputs, pre) = _forward_cache(xb, params)

    data, dyhat = _data_term(yhat, yb, hyper, centers)
    sp = 0.0
    dshapes = None
    prior = _prior_shapes(params, shapes)
    if hyper.lam > 0:
        eb, _ = _as_batch(edge)
        _same_shape(eb, yb, "edge/label")
        energy, (keep, route, masked, resp) = _shape_prior_forward(yhat, eb, prior, hyper.pool, hyper.pool_threshold)
        sp = float(-hyper.lam * energy.mean())
        if need_grad:
            coef = -2.0 * hyper.lam / B
            dmasked = coef * correlate_valid(resp, prior[None]).sum(axis=1)
            dyhat = dyhat + route_gradient(dmasked * eb, route) * keep
            if params.shapes is not None:
                dshapes = coef * correlate_valid(resp, masked[:, None]).sum(axis=0)

    sl = 0.0
    if hyper.gamma > 0:
        sl = shape_learning_loss(params.shapes, reference, hyper.gamma, ssim_config)
        if need_grad:
            g = shape_learning_gradient(params.shapes, reference, hyper.gamma, ssim_config)
            dshapes = g if dshapes is None else dshapes + g

    comps = LossComponents(data, sp, sl, data + sp + sl)
    if not need_grad:
        return comps, None

    if params.shapes is not None and dshapes is None:
        dshapes = np.zeros_like(params.shapes)
    L = len(params.weights)
    gw, gb = [None] * L, [None] * L
    delta = dyhat[..., None]
    for l in range(L - 1, -1, -1):
        if l < L - 1:
            delta = delta * (pre[l] > 0)
        gw[l], gb[l], delta = _conv_backward(inputs[l], params.weights[l], delta, need_input=l > 0)
    return comps, Gradients(gw, gb, dshapes)


def loss_components(x, y, edge, params, hyper, shapes=None, reference=None, centers=None,
                    ssim_config=SsimConfig()):
    comps, _ = loss_and_gradients(x, y, edge, params, hyper, shapes, reference, centers,
                                  ssim_config, need_grad=False)
    return comps


def total_loss(x, y, edge, params, hyper, shapes=None, reference=None, centers=None,
               ssim_config=SsimConfig()):
    """Data term + shape prior + shape learning.

    With ``lam = gamma = 0`` this is the plain data term; with
    ``gamma = 0`` the shape-learning term vanishes.
    """
    return loss_components(x, y, edge, params, hyper, shapes, reference, centers, ssim_config).total


def backward(x, y, edge, params, hyper, shapes=None, reference=None, centers=None,
             ssim_config=SsimConfig()):
    """Gradients of :func:`total_loss` for every weight, bias and learnable shape."""
    _, grads = loss_and_gradients(x, y, edge, params, hyper, shapes, reference, centers, ssim_config)
    return grads


def sgd_step(params, grads, eta, weight_decay=0.0):
    """One gradient step; weight decay applies to weights and biases only."""
    if len(grads.weights) != len(params.weights):
        raise ValueError("gradient and parameter layer counts differ")
    new = params.copy()
    for l, (w, g) in enumerate(zip(params.weights, grads.weights)):
        if w.shape != g.shape:
            raise ValueError(f"layer {l + 1}: gradient shape {g.shape} != weight shape {w.shape}")
        new.weights[l] = w - eta * (g + weight_decay * w)
    for l, (b, g) in enumerate(zip(params.biases, grads.biases)):
        if b.shape != g.shape:
            raise ValueError(f"layer {l + 1}: bias gradient shape mismatch")
        new.biases[l] = b - eta * (g + weight_decay * b)
    if params.shapes is not None and grads.shapes is not None:
        if params.shapes.shape != grads.shapes.shape:
            raise ValueError("shape gradient does not match learnable shapes")
        new.shapes = params.shapes - eta * grads.shapes
    return new


def learning_rate(hyper, epoch):
    return hyper.eta * hyper.lr_decay ** (epoch // hyper.lr_decay_every)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)


def train(dataset, config, hyper, shapes=None, reference=None, params=None, ssim_config=SsimConfig(),
          callback=None):
    """Minibatch SGD over a list of training tuples.

    ``shapes`` is the fixed prior set; when ``hyper.gamma > 0`` the
    learnable shapes are initialised from ``reference`` and updated with
    the network.  Returns the final parameters and one history row per
    epoch holding the epoch-averaged loss components.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    X = np.stack([t.x for t in dataset])
    E = np.stack([t.x_edge for t in dataset])
    Y = np.stack([t.y for t in dataset])
    C = [t.centers for t in dataset]
    rng = np.random.default_rng(hyper.seed)
    if params is None:
        learn = reference if hyper.gamma > 0 else None
        params = init_params(config, int(rng.integers(2**31)), learn)
    params.check(config)
    n = len(X)
    history = []
    for epoch in range(hyper.epochs):
        eta = learning_rate(hyper, epoch)
        order = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, hyper.batch_size):
            idx = np.sort(order[start : start + hyper.batch_size])
            try:
                comps, grads = loss_and_gradients(
                    X[idx], Y[idx], E[idx], params, hyper, shapes, reference,
                    [C[i] for i in idx], ssim_config,
                )
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch + 1}: {exc}") from exc
            if not np.isfinite(comps.total):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}")
            params = sgd_step(params, grads, eta, hyper.weight_decay)
            sums += len(idx) * np.array([comps.data, comps.shape_prior, comps.shape_learning, comps.total])
        row = {"epoch": epoch + 1}
        row.update(zip(("loss", "shape_prior", "shape_learning", "total"), (sums / n).tolist()))
        history.append(row)
        log.debug("epoch %d: %s", epoch + 1, row)
        if callback is not None:
            callback(epoch + 1, params, row)
    return TrainResult(params, history)


HISTORY_FIELDS = ("epoch", "loss", "shape_prior", "shape_learning", "total")


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_history(path):
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, config, params, hyper=None):
    """Store config, weights, biases and any learnable shapes in one ``.npz``."""
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(config)}
    if hyper is not None:
        meta["hyper"] = asdict(hyper)
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{l}"] = w
        arrays[f"b{l}"] = b
    if params.shapes is not None:
        arrays["shapes"] = params.shapes
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, with_shapes=False):
    """Return ``(config, params, hyper_dict)``; shapes are read only on request."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        config = NetworkConfig(**meta["config"])
        n = len(config.layer_shapes())
        weights = [z[f"W{l}"] for l in range(n)]
        biases = [z[f"b{l}"] for l in range(n)]
        shapes = z["shapes"] if with_shapes and "shapes" in z.files else None
    params = NetworkParams(weights, biases, shapes)
    params.check(config)
    return config, params, meta.get("hyper")


def hyper_from_dict(d):
    names = {f.name for f in fields(HyperParams)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown hyperparameters {sorted(unknown)}")
    return replace(HyperParams(), **d)
