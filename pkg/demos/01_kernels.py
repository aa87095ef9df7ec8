"""Convolution, stride-1 max pooling and gradient routing on small grids.

Run:  python demos/01_kernels.py
"""
import numpy as np

from shapeprior.numerics import conv2d_same, gaussian_kernel, max_pool_same, route_gradient

np.set_printoptions(precision=3, suppress=True)

# True convolution flips the kernel: an off-centre tap moves the image the
# "other" way from what a correlation would do.
x = np.zeros((5, 5))
x[2, 2] = 1.0
k = np.zeros((3, 3))
k[0, 1] = 1.0
print("impulse convolved with a top-centre tap:\n", conv2d_same(x, k))

# label kernel used to turn annotated centres into soft targets
print("\nGaussian label kernel (sigma 2, 7x7, peak 1):\n", gaussian_kernel(2.0, 7))

# Pooling with stride 1 keeps the grid size and dilates isolated peaks.
y = np.zeros((7, 7))
y[3, 3], y[1, 5] = 1.0, 0.6
pooled, route = max_pool_same(y, 3)
print("\npooled (p=3):\n", pooled)

# Gradients flow back only to the winners; shared winners accumulate.
# Flat zero windows are ties, and ties go to the first cell in row-major order.
back = route_gradient(np.ones_like(pooled), route)
print("\nrouted ones:\n", back)
print("winner of the centre peak collects", back[3, 3], "upstream cells")
