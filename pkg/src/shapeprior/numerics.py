"""Deterministic 2-D array kernels shared by the rest of the package.

Convolution convention
----------------------
Every convolution here is a *true* convolution (the kernel is flipped)::

    out[i, j] = sum_{u, v} kernel[u, v] * input[i - u + r, j - v + r]

with ``r = k // 2`` for the centred ``same`` variant and ``r = 0`` for the
``full`` variant.  Padding outside the grid is zero.  The shape-prior term
and its gradients rely on this convention, so do not mix in
``scipy.signal.correlate`` style kernels.

Functions accept leading batch dimensions where noted; the last two axes
are always (rows, cols).
"""
from dataclasses import dataclass

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view


def as_grid(a, name="input"):
    """Return ``a`` as a finite float64 array with at least two axes."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] < 1 or a.shape[-2] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def conv2d_same(input, kernel):
    """Zero-padded 'same' convolution of a 2-D grid with an odd kernel.

    Parameters
    ----------
    input : array_like, shape (..., H, W)
    kernel : array_like, shape (kh, kw)
        Both sides must be odd so the kernel has a centre cell.

    Returns
    -------
    numpy.ndarray, shape (..., H, W)
    """
    x = as_grid(input)
    k = as_grid(kernel, "kernel")
    if k.ndim != 2:
        raise ValueError("kernel must be 2-D")
    kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {k.shape}")
    pad = [(0, 0)] * (x.ndim - 2) + [(kh // 2, kh // 2), (kw // 2, kw // 2)]
    xp = np.pad(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    return np.tensordot(win, k[::-1, ::-1], axes=([-2, -1], [0, 1]))


def _fft_shape(shape):
    return tuple(scipy.fft.next_fast_len(int(n), real=True) for n in shape)


def conv2d_full(input, kernels):
    """Full 2-D convolution of every input grid with every kernel.

    Output side lengths are ``H + kh - 1`` and ``W + kw - 1``; no part of
    any kernel placement overlapping the grid is cropped, so kernels of
    any size (odd or even) are allowed.  Evaluated with real FFTs.

    Parameters
    ----------
    input : array_like, shape (B, H, W) or (H, W)
    kernels : array_like, shape (Q, kh, kw) or (kh, kw)

    Returns
    -------
    numpy.ndarray, shape (B, Q, H+kh-1, W+kw-1) for stacked inputs, with
    the B and Q axes dropped for 2-D arguments.
    """
    x = as_grid(input)
    k = as_grid(kernels, "kernels")
    sx, sk = x.ndim == 2, k.ndim == 2
    x = x.reshape((-1,) + x.shape[-2:])
    k = k.reshape((-1,) + k.shape[-2:])
    out_shape = (x.shape[1] + k.shape[1] - 1, x.shape[2] + k.shape[2] - 1)
    fshape = _fft_shape(out_shape)
    fx = scipy.fft.rfft2(x, fshape)
    fk = scipy.fft.rfft2(k, fshape)
    out = scipy.fft.irfft2(fx[:, None] * fk[None, :], fshape)
    out = out[..., : out_shape[0], : out_shape[1]]
    if sk:
        out = out[:, 0]
    if sx:
        out = out[0]
    return np.ascontiguousarray(out)


def correlate_valid(input, kernel):
    """Valid cross-correlation, the adjoint of :func:`conv2d_full`.

    ``out[..., m, n] = sum_{u, v} input[..., m + u, n + v] * kernel[..., u, v]``

    Leading axes of ``input`` and ``kernel`` broadcast against each other.
    Output side lengths are ``H - kh + 1`` and ``W - kw + 1``.
    """
    x = np.asarray(input, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    H, W = x.shape[-2:]
    kh, kw = k.shape[-2:]
    if kh > H or kw > W:
        raise ValueError(f"kernel {k.shape[-2:]} larger than input {x.shape[-2:]}")
    fshape = _fft_shape((H, W))
    fx = scipy.fft.rfft2(x, fshape)
    fk = scipy.fft.rfft2(k[..., ::-1, ::-1], fshape)
    out = scipy.fft.irfft2(fx * fk, fshape)
    return np.ascontiguousarray(out[..., kh - 1 : H, kw - 1 : W])


@dataclass(frozen=True)
class PoolRoute:
    """Winner bookkeeping for :func:`max_pool_same`.

    ``argmax_index`` holds, for every output cell, the flat index of the
    winning input cell within the corresponding input grid.
    """

    argmax_index: np.ndarray
    input_shape: tuple

    def winners(self):
        """Return (rows, cols) of the winning cell for each output cell."""
        W = self.input_shape[-1]
        return np.divmod(self.argmax_index, W)


def max_pool_same(input, p):
    """Stride-1 max pooling over a centred ``p x p`` window.

    Out-of-grid cells never win.  Ties go to the first cell of the window
    in row-major order.

    Parameters
    ----------
    input : array_like, shape (..., H, W)
    p : int
        Odd window side.

    Returns
    -------
    pooled : numpy.ndarray, shape (..., H, W)
    route : PoolRoute
    """
    x = as_grid(input)
    p = int(p)
    if p < 1 or p % 2 == 0:
        raise ValueError(f"pool window must be a positive odd integer, got {p}")
    H, W = x.shape[-2:]
    if p > 2 * min(H, W):
        raise ValueError(f"pool window {p} too large for a {H}x{W} grid")
    r = p // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x, pad, constant_values=-np.inf)
    win = sliding_window_view(xp, (p, p), axis=(-2, -1))
    flat = win.reshape(win.shape[:-2] + (p * p,))
    k = np.argmax(flat, axis=-1)
    pooled = np.take_along_axis(flat, k[..., None], axis=-1)[..., 0]
    du, dv = np.divmod(k, p)
    rows = np.arange(H)[:, None] + du - r
    cols = np.arange(W)[None, :] + dv - r
    return pooled, PoolRoute(rows * W + cols, x.shape)


def route_gradient(upstream, route):
    """Send each upstream value back to the winner of its pooling window.

    Values accumulate when several output cells share a winner; cells that
    never win receive zero.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != route.argmax_index.shape:
        raise ValueError(
            f"upstream shape {g.shape} does not match pooled shape {route.argmax_index.shape}"
        )
    H, W = route.input_shape[-2:]
    lead = g.shape[:-2]
    n = int(np.prod(lead)) if lead else 1
    offsets = (np.arange(n) * (H * W)).reshape(lead + (1, 1)) if lead else 0
    idx = (route.argmax_index + offsets).ravel()
    out = np.bincount(idx, weights=g.ravel(), minlength=n * H * W)
    return out.reshape(route.input_shape)


def gaussian_kernel(sigma, size):
    """Centred isotropic Gaussian with peak value exactly 1.

    The kernel is peak-normalised, not unit-sum, so stamping it on a
    centre gives a label map that reaches 1 at that centre.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    r = size // 2
    d = np.arange(-r, r + 1, dtype=np.float64)
    sq = d[:, None] ** 2 + d[None, :] ** 2
    return np.exp(-sq / (2.0 * sigma**2))
