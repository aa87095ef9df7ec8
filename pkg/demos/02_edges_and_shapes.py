"""Edge maps, shape similarity and pruning of an expert shape set.

Run:  python demos/02_edges_and_shapes.py
"""
import numpy as np

from shapeprior.edges import CannyConfig, canny
from shapeprior.shapes import cw_ssim, eliminate_shapes, similarity_matrix, ssim
from shapeprior.synthetic import ellipse_boundary, expert_shape_set, rect_boundary, synth_image

rng = np.random.default_rng(0)
img, centres = synth_image(rng, size=128)
edges = canny(img, CannyConfig())
print(f"synthetic image: {len(centres)} nuclei, {int(edges.sum())} edge pixels "
      f"({edges.mean():.1%} of the grid)")

# Shape similarity.  SSIM is strict about position, the complex-wavelet
# variant forgives small shifts, which is what we want for outlines.
disk = ellipse_boundary(20, 7, 7)
cases = {
    "ellipse 7x6.5": ellipse_boundary(20, 7, 6.5),
    "ellipse 7x5": ellipse_boundary(20, 7, 5),
    "ellipse 7x4": ellipse_boundary(20, 7, 4),
    "thin bar": rect_boundary(20, 8, 2),
    "disk shifted 1px": np.roll(disk, 1, axis=1),
}
print(f"\n{'vs disk':<18}{'ssim':>8}{'cw_ssim':>9}")
for name, s in cases.items():
    print(f"{name:<18}{ssim(disk, s):8.3f}{cw_ssim(disk, s):9.3f}")

# Prune the expert set: groups of near-duplicates collapse to their first member.
expert = expert_shape_set(20, seed=0)
m = similarity_matrix(expert)
ref = eliminate_shapes(expert, threshold=0.8, matrix=m)
print(f"\nexpert set: {len(expert)} shapes -> {len(ref)} representatives")
off = m[~np.eye(len(m), dtype=bool)]
print(f"pairwise CW-SSIM: min {off.min():.2f}, median {np.median(off):.2f}, max {off.max():.2f}")
