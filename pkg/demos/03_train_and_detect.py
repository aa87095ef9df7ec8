"""Train a small network with and without the shape prior, then detect.

Uses a reduced synthetic dataset so it finishes in well under a minute.  The
full desk-scale comparison lives in the acceptance suite.

Run:  python demos/03_train_and_detect.py
"""
import tempfile
import time

import numpy as np

from shapeprior.data import Manifest, load_dataset, training_tuples
from shapeprior.detection import DetectionConfig, EvalConfig, detect, match_golden, pr_curve
from shapeprior.network import HyperParams, NetworkConfig, forward, train
from shapeprior.shapes import eliminate_shapes, load_shape_set
from shapeprior.synthetic import write_dataset

tmp = tempfile.mkdtemp()
m = Manifest.read(write_dataset(tmp, n_images=16, size=96, seed=3))
train_set, test_set = load_dataset(m.image_dir, m.annotation_dir, split=m.split, seed=m.seed)
tuples = training_tuples(train_set, stride=20)
expert = load_shape_set(m.shape_dir)
reference = eliminate_shapes(expert)
print(f"{len(train_set)} training images -> {len(tuples)} patches; "
      f"{len(expert)} expert shapes, {len(reference)} after pruning")

cfg = NetworkConfig(depth=4, channels=16)
runs = {
    "no prior": dict(hyper=HyperParams(eta=1e-4, epochs=4, batch_size=16, seed=0)),
    "fixed prior": dict(hyper=HyperParams(lam=1e-4, eta=1e-4, epochs=4, batch_size=16, seed=0),
                        shapes=expert),
    "learned prior": dict(hyper=HyperParams(lam=1e-4, gamma=2.0, eta=1e-4, epochs=4, batch_size=16,
                                            seed=0), reference=reference),
}
models = {}
for name, kw in runs.items():
    t = time.time()
    r = train(tuples, cfg, **kw)
    models[name] = r.params
    last = r.history[-1]
    print(f"\n{name}: {time.time() - t:.0f} s, final epoch  data {last['loss']:.2f}  "
          f"prior {last['shape_prior']:.2f}  shape-learning {last['shape_learning']:.2f}")
    pc = pr_curve([forward(s.image, r.params) for s in test_set], [s.centers for s in test_set])
    thr, p, rc, f1 = pc.best
    print(f"  best F1 {f1:.3f} at threshold {thr:.2f} (P {p:.3f}, R {rc:.3f})")

# Inference needs only the image: no edges, no shapes.
s = test_set[0]
yhat = forward(s.image, models["learned prior"])
found = detect(yhat, DetectionConfig(threshold=0.3, nms_radius=6))
rep = match_golden(found, s.centers, EvalConfig(6))
print(f"\none test image: {len(found)} detections for {len(s.centers)} nuclei, "
      f"TP {rep.tp} FP {rep.fp} FN {rep.fn}")
print("first few centres (row, col):", np.asarray(found)[:5].tolist())
