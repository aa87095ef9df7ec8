"""Command-line front end.

Subcommands: synth, edges, prune-shapes, train, detect, eval, pr-curve.
Hyperparameters come from a ``key = value`` run-config file (``--config``);
flags carry only paths, the training mode and a few run-shape options.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import data as D
from .detection import DetectionConfig, EvalConfig, default_thresholds, detect, match_golden, pr_curve, prf1
from .edges import CannyConfig, canny
from .synthetic import write_dataset
from .network import (
    HyperParams,
    NetworkConfig,
    TrainingError,
    forward,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)
from .shapes import (
    CwSsimConfig,
    ShapeSet,
    SsimConfig,
    eliminate_shapes,
    load_shape_set,
    save_shape_set,
    similarity_matrix,
)

log = logging.getLogger("shapeprior")

MODES = ("np", "wnp", "sp", "tsp")


class InputError(Exception):
    """Bad user input: missing file, malformed config, inconsistent options."""


# ---------------------------------------------------------------------------
# run config


@dataclass(frozen=True)
class RunConfig:
    """Flat key-value view over every module's configuration.

    Keys not listed here are rejected.  Values are validated by the owning
    config classes when :meth:`build` is called.
    """

    # network
    depth: int = 7
    channels: int = 64
    first_kernel: int = 5
    mid_kernel: int = 3
    # optimisation
    lam: float | None = None
    gamma: float | None = None
    pool: int = 11
    pool_threshold: float = 0.2
    eta: float = 1e-3
    weight_decay: float = 1e-5
    lr_decay: float = 0.75
    lr_decay_every: int = 10
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    w_fp: float = 0.7
    w_fn: float = 0.3
    # edges
    blur_sigma: float = 1.4
    low_threshold: float = 0.1
    high_threshold: float = 0.3
    # data
    patch: int = 40
    stride: int = 20
    label_sigma: float = 2.0
    label_size: int = 7
    # detection and evaluation
    threshold: float = 0.5
    nms_radius: int | None = None
    golden_radius: float = 6.0
    pr_step: float = 0.05
    # shapes
    prune_threshold: float = 0.8
    cw_levels: int = 2
    cw_orientations: int = 6
    cw_K: float = 0.01
    cw_window: int = 7
    ssim_window: int = 8

    @classmethod
    def from_file(cls, path):
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}")
        try:
            kv = D.read_keyvalue(p)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        return cls.from_dict(kv, source=str(p))

    @classmethod
    def from_dict(cls, kv, source="config"):
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(kv) - set(types))
        if unknown:
            raise InputError(f"{source}: unknown keys {unknown}")
        out = {}
        for k, v in kv.items():
            t = types[k]
            try:
                if isinstance(v, str):
                    v = int(v) if "int" in str(t) else float(v)
            except ValueError:
                raise InputError(f"{source}: bad value for {k!r}: {v!r}") from None
            out[k] = v
        cfg = cls(**out)
        cfg.build()  # validate everything up front
        return cfg

    def build(self):
        """Instantiate every owning config; raises InputError on invalid values."""
        for k in ("lam", "gamma"):
            v = getattr(self, k)
            if v is not None and not v >= 0:
                raise InputError(f"{k} must be nonnegative, got {v}")
        try:
            return {
                "network": NetworkConfig(self.depth, self.channels, self.first_kernel, self.mid_kernel),
                "canny": CannyConfig(self.blur_sigma, self.low_threshold, self.high_threshold),
                "detection": DetectionConfig(self.threshold, self.nms),
                "eval": EvalConfig(self.golden_radius),
                "cw": CwSsimConfig(self.cw_levels, self.cw_orientations, self.cw_K, self.cw_window),
                "ssim": SsimConfig(self.ssim_window),
                "hyper": replace(self, lam=None, gamma=None).hyper("tsp"),
            }
        except ValueError as exc:
            raise InputError(str(exc)) from None

    @property
    def nms(self):
        return int(round(self.golden_radius)) if self.nms_radius is None else self.nms_radius

    def hyper(self, mode):
        """HyperParams for a training mode.

        ``np`` and ``wnp`` force lam = gamma = 0, ``sp`` forces gamma = 0;
        setting a forced term to a nonzero value is an inconsistency.
        Unset terms default to the standard settings (sp: lam 5e-7;
        tsp: lam 1e-10, gamma 2).
        """
        lam, gamma = self.lam, self.gamma
        if mode in ("np", "wnp"):
            if lam or gamma:
                raise InputError(f"mode {mode} trains without regularisers; lam/gamma must be unset or 0")
            lam = gamma = 0.0
        elif mode == "sp":
            if gamma:
                raise InputError("mode sp fixes gamma = 0; use mode tsp for shape learning")
            lam, gamma = (5e-7 if lam is None else lam), 0.0
            if lam <= 0:
                raise InputError("mode sp needs lam > 0")
        elif mode == "tsp":
            lam = 1e-10 if lam is None else lam
            gamma = 2.0 if gamma is None else gamma
            if gamma <= 0:
                raise InputError("mode tsp needs gamma > 0")
        else:
            raise InputError(f"unknown mode {mode!r}")
        try:
            return HyperParams(
                lam=lam, gamma=gamma, pool=self.pool, pool_threshold=self.pool_threshold,
                eta=self.eta, weight_decay=self.weight_decay, lr_decay=self.lr_decay,
                lr_decay_every=self.lr_decay_every, epochs=self.epochs,
                batch_size=self.batch_size, seed=self.seed, weighted=mode == "wnp",
                w_fp=self.w_fp, w_fn=self.w_fn, golden_radius=self.golden_radius,
                detect_threshold=self.threshold,
            )
        except ValueError as exc:
            raise InputError(str(exc)) from None


# ---------------------------------------------------------------------------
# helpers


def _need_file(path, what="file"):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _need_dir(path, what="directory"):
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"{what} not found: {p}")
    return p


def _read_image(path):
    p = _need_file(path, "image")
    try:
        return D.read_image(p)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {p}: {exc}") from None


def _load_shapes(directory, kind):
    d = _need_dir(directory, "shape directory")
    try:
        return load_shape_set(d, kind)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _manifest(path):
    p = _need_file(path, "manifest")
    try:
        return D.Manifest.read(p)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_split(manifest, canny_config):
    try:
        return D.load_dataset(
            manifest.image_dir, manifest.annotation_dir, canny_config, manifest.split, manifest.seed
        )
    except (FileNotFoundError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _fmt(v):
    return f"{v:.6f}"


def _write_rows(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg):
    manifest = write_dataset(Path(args.out), n_images=args.n_images, size=args.size, seed=args.seed,
                             shape_side=args.shape_side)
    print(manifest)
    return 0


def cmd_edges(args, cfg):
    c = cfg.build()
    img = _read_image(args.image)
    try:
        e = canny(img, c["canny"])
    except ValueError as exc:
        raise InputError(f"{args.image}: {exc}") from None
    src = Path(args.image)
    out = Path(args.out) if args.out else src.with_name(f"{src.stem}_edges.png")
    D.write_image(out, e)
    print(out)
    return 0


def cmd_prune_shapes(args, cfg):
    c = cfg.build()
    expert = _load_shapes(args.shape_dir, "expert")
    threshold = cfg.prune_threshold if args.threshold is None else args.threshold
    if not 0 <= threshold <= 1:
        raise InputError(f"threshold must lie in [0, 1], got {threshold}")
    m = similarity_matrix(expert, c["cw"])
    ref = eliminate_shapes(expert, threshold, c["cw"], matrix=m)
    out = Path(args.out)
    save_shape_set(ref, out, prefix="ref")
    _write_rows(out / "similarity.csv", [""] + [f"s{j}" for j in range(len(m))],
                [[f"s{i}"] + [_fmt(v) for v in row] for i, row in enumerate(m)])
    log.info("kept %d of %d shapes", len(ref.grids), len(expert.grids))
    print(len(ref.grids))
    return 0


def cmd_train(args, cfg):
    c = cfg.build()
    hyper = cfg.hyper(args.mode)
    manifest = _manifest(args.manifest)

    shapes = reference = None
    if args.mode == "sp":
        shape_dir = args.shapes or manifest.shape_dir
        if shape_dir is None:
            raise InputError("mode sp needs a shape directory (--shapes or shape_dir in the manifest)")
        shapes = _load_shapes(shape_dir, "expert")
    elif args.mode == "tsp":
        if args.reference is None:
            raise InputError("mode tsp needs --reference (output of prune-shapes)")
        reference = _load_shapes(args.reference, "reference")

    train_s, _ = _load_split(manifest, c["canny"])
    if not train_s:
        raise InputError("training partition is empty")
    try:
        tuples = D.training_tuples(train_s, cfg.patch, cfg.stride, cfg.label_sigma, cfg.label_size)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if not tuples:
        raise InputError("no non-void training patches")
    log.info("%s: %d images, %d patches", args.mode, len(train_s), len(tuples))

    def report(epoch, params, row):
        log.info("epoch %d  loss %.4f  sp %.4f  ssim %.4f", epoch, row["loss"], row["shape_prior"],
                 row["shape_learning"])

    result = train(tuples, c["network"], hyper, shapes=shapes, reference=reference,
                   ssim_config=c["ssim"], callback=report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", c["network"], result.params, hyper)
    write_history(out / "loss_history.csv", result.history)
    if args.mode == "tsp":
        save_shape_set(ShapeSet(result.params.shapes, "learnable"), out / "learned_shapes", prefix="learned")
    print(out / "checkpoint.npz")
    return 0


def _checkpoint(path, cfg):
    p = _need_file(path, "checkpoint")
    try:
        config, params, _ = load_checkpoint(p)
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(f"unreadable checkpoint {p}: {exc}") from None
    if cfg.given("depth") and cfg.depth != config.depth:
        raise InputError(f"config depth {cfg.depth} does not match checkpoint depth {config.depth}")
    if cfg.given("channels") and cfg.channels != config.channels:
        raise InputError(f"config channels {cfg.channels} do not match checkpoint ({config.channels})")
    return config, params


def _write_detections(path, centers):
    _write_rows(path, ["row", "col"], [[int(r), int(c)] for r, c in centers])


def cmd_detect(args, cfg):
    c = cfg.build()
    config, params = _checkpoint(args.checkpoint, cfg)
    src = Path(args.image)
    if src.is_dir():
        files = [p for p in sorted(src.iterdir()) if p.suffix.lower() in D.IMAGE_SUFFIXES]
        if not files:
            raise InputError(f"no images in {src}")
        if args.out is None:
            raise InputError("--out is required when detecting on a directory")
        out_dir = Path(args.out)
        for f in files:
            _write_detections(out_dir / f"{f.stem}.csv", detect(forward(_read_image(f), params, config),
                                                              c["detection"]))
        print(out_dir)
        return 0
    centers = detect(forward(_read_image(src), params, config), c["detection"])
    out = Path(args.out) if args.out else src.with_name(f"{src.stem}_centers.csv")
    _write_detections(out, centers)
    print(out)
    return 0


def _csv_stems(directory):
    d = _need_dir(directory)
    return {p.stem: p for p in sorted(d.glob("*.csv"))}


def cmd_eval(args, cfg):
    c = cfg.build()
    det = _csv_stems(args.detections)
    gt = _csv_stems(args.ground_truth)
    only_d = sorted(set(det) - set(gt))
    only_g = sorted(set(gt) - set(det))
    if only_d or only_g:
        msg = ["detection and ground-truth filenames differ"]
        if only_d:
            msg.append("  no ground truth for: " + ", ".join(only_d))
        if only_g:
            msg.append("  no detections for: " + ", ".join(only_g))
        raise InputError("\n".join(msg))
    if not det:
        raise InputError("no detection files")
    rows, reps = [], []
    for stem in sorted(det):
        try:
            m = match_golden(D.read_centers(det[stem]), D.read_centers(gt[stem]), c["eval"])
        except ValueError as exc:
            raise InputError(str(exc)) from None
        reps.append(m)
        rows.append([stem, m.tp, m.fp, m.fn, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1)])
    P = float(np.mean([m.precision for m in reps]))
    R = float(np.mean([m.recall for m in reps]))
    F = 2 * P * R / (P + R) if P + R > 0 else 0.0
    tot = [sum(getattr(m, k) for m in reps) for k in ("tp", "fp", "fn")]
    rows.append(["ALL", *tot, _fmt(P), _fmt(R), _fmt(F)])
    header = ["image", "tp", "fp", "fn", "precision", "recall", "f1"]
    if args.out:
        _write_rows(args.out, header, rows)
    print(f"precision {P:.4f}  recall {R:.4f}  f1 {F:.4f}")
    return 0


def cmd_pr_curve(args, cfg):
    c = cfg.build()
    config, params = _checkpoint(args.checkpoint, cfg)
    manifest = _manifest(args.manifest)
    # only the test partition is needed; skip edge maps entirely
    try:
        images = sorted(p for p in Path(manifest.image_dir).iterdir() if p.suffix.lower() in D.IMAGE_SUFFIXES)
    except OSError as exc:
        raise InputError(str(exc)) from None
    if not images:
        raise InputError(f"no images in {manifest.image_dir}")
    n_train, _ = D.split_sizes(len(images), manifest.split)
    order = np.random.default_rng(manifest.seed).permutation(len(images))
    test = [images[i] for i in sorted(order[n_train:].tolist())] if not args.all else images
    if not test:
        raise InputError("test partition is empty")
    yhat, gt = [], []
    for p in test:
        a = _need_file(Path(manifest.annotation_dir) / f"{p.stem}.csv", "annotation")
        yhat.append(forward(_read_image(p), params, config))
        gt.append(D.read_centers(a))
    curve = pr_curve(yhat, gt, c["eval"], default_thresholds(cfg.pr_step), cfg.nms)
    rows = [[f"{t:.4f}", _fmt(p), _fmt(r), _fmt(f)] for t, p, r, f in curve.rows()]
    _write_rows(args.out, ["threshold", "precision", "recall", "f1"], rows)
    t, p, r, f = curve.best
    print(f"best f1 {f:.4f} at threshold {t:.2f} (precision {p:.4f}, recall {r:.4f})")
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="shapeprior", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value run-config file")
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=60)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape-side", type=int, default=20)

    p = add("edges", cmd_edges, "Canny edge map of an image")
    p.add_argument("image")
    p.add_argument("--out")

    p = add("prune-shapes", cmd_prune_shapes, "reduce an expert shape set with CW-SSIM")
    p.add_argument("shape_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)

    p = add("train", cmd_train, "train a detector")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shapes", help="expert shape directory (sp; default: manifest shape_dir)")
    p.add_argument("--reference", help="reference shape directory (tsp)")

    p = add("detect", cmd_detect, "detect centres with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("image", help="image file or directory of images")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "score detection CSVs against ground truth")
    p.add_argument("detections")
    p.add_argument("ground_truth")
    p.add_argument("--out")

    p = add("pr-curve", cmd_pr_curve, "precision/recall sweep over the detection threshold")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--all", action="store_true", help="evaluate every image, not just the test split")
    return ap


class _GivenConfig:
    """RunConfig plus the set of keys the user actually wrote."""

    def __init__(self, cfg, given):
        self._cfg, self._given = cfg, frozenset(given)

    def __getattr__(self, name):
        return getattr(self._cfg, name)

    def given(self, key):
        return key in self._given


def _run_config(path):
    if path is None:
        return _GivenConfig(RunConfig(), ())
    cfg = RunConfig.from_file(path)
    return _GivenConfig(cfg, D.read_keyvalue(path))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _run_config(args.config)
        return args.fn(args, cfg)
    except InputError as exc:
        print(f"shapeprior {args.command}: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"shapeprior {args.command}: training failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level guard
        log.debug("unhandled error", exc_info=True)
        print(f"shapeprior {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
