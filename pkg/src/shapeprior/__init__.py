"""Shape-prior regularised CNN for nucleus-centre detection.

Submodules
----------
numerics   convolution, pooling with gradient routing, Gaussian kernels
edges      Canny edge maps
shapes     shape sets, SSIM / CW-SSIM, shape elimination and shape learning
network    the regression CNN, its regularised objective, gradients, training
data       label synthesis, patch extraction, dataset I/O
detection  peak detection, golden-region matching, P/R/F1 and PR curves
synthetic  synthetic nucleus images for desk-scale experiments
cli        command-line front end
"""
from .detection import DetectionConfig, EvalConfig, detect, match_golden, pr_curve, prf1
from .edges import CannyConfig, canny
from .network import (
    HyperParams,
    NetworkConfig,
    NetworkParams,
    backward,
    forward,
    init_params,
    total_loss,
    train,
)
from .numerics import conv2d_same, gaussian_kernel, max_pool_same, route_gradient
from .shapes import CwSsimConfig, ShapeSet, SsimConfig, cw_ssim, eliminate_shapes, ssim

__version__ = "0.1.0"

__all__ = [
    "CannyConfig",
    "CwSsimConfig",
    "DetectionConfig",
    "EvalConfig",
    "HyperParams",
    "NetworkConfig",
    "NetworkParams",
    "ShapeSet",
    "SsimConfig",
    "backward",
    "canny",
    "conv2d_same",
    "cw_ssim",
    "detect",
    "eliminate_shapes",
    "forward",
    "gaussian_kernel",
    "init_params",
    "match_golden",
    "max_pool_same",
    "pr_curve",
    "prf1",
    "route_gradient",
    "ssim",
    "total_loss",
    "train",
]
