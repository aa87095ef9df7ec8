import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shapeprior.numerics import (
    conv2d_full,
    conv2d_same,
    correlate_valid,
    gaussian_kernel,
    max_pool_same,
    route_gradient,
)


def conv_loop(x, k):
    """Direct true convolution with zero padding, one output cell at a time."""
    H, W = x.shape
    kh, kw = k.shape
    rh, rw = kh // 2, kw // 2
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            s = 0.0
            for u in range(kh):
                for v in range(kw):
                    r, c = i - u + rh, j - v + rw
                    if 0 <= r < H and 0 <= c < W:
                        s += k[u, v] * x[r, c]
            out[i, j] = s
    return out


def pool_loop(x, p):
    H, W = x.shape
    r = p // 2
    out = np.zeros((H, W))
    win = np.zeros((H, W, 2), dtype=int)
    for i in range(H):
        for j in range(W):
            best, arg = -np.inf, None
            for a in range(i - r, i + r + 1):
                for b in range(j - r, j + r + 1):
                    if 0 <= a < H and 0 <= b < W and x[a, b] > best:
                        best, arg = x[a, b], (a, b)
            out[i, j] = best
            win[i, j] = arg
    return out, win


grids = arrays(np.float64, st.tuples(st.integers(3, 9), st.integers(3, 9)),
               elements=st.floats(-2, 2, allow_nan=False))


# --- conv2d_same -------------------------------------------------------------


def test_conv_identity_kernel(rng):
    k = np.zeros((3, 3))
    k[1, 1] = 1
    x = rng.normal(size=(6, 8))
    np.testing.assert_array_equal(conv2d_same(x, k), x)


def test_conv_zero_padding_counts():
    out = conv2d_same(np.ones((5, 5)), np.ones((3, 3)))
    assert out[2, 2] == 9
    assert out[0, 0] == out[0, 4] == out[4, 0] == out[4, 4] == 4
    assert out[0, 2] == 6


def test_conv_matches_loop(rng):
    x = rng.normal(size=(7, 7))
    k = rng.normal(size=(3, 3))
    assert np.max(np.abs(conv2d_same(x, k) - conv_loop(x, k))) < 1e-12


def test_conv_flips_kernel():
    # an off-centre tap shifts the image the "convolution" way
    x = np.zeros((5, 5))
    x[2, 2] = 1
    k = np.zeros((3, 3))
    k[0, 0] = 1
    out = conv2d_same(x, k)
    assert out[1, 1] == 1 and out.sum() == 1


def test_conv_rejects_even_kernel():
    with pytest.raises(ValueError, match="odd"):
        conv2d_same(np.ones((5, 5)), np.ones((2, 3)))


def test_conv_batched(rng):
    x = rng.normal(size=(3, 6, 5))
    k = rng.normal(size=(3, 3))
    out = conv2d_same(x, k)
    for b in range(3):
        np.testing.assert_allclose(out[b], conv2d_same(x[b], k), atol=1e-14)


@given(grids, grids, st.floats(-3, 3), st.floats(-3, 3))
def test_conv_linear(A, B, a, b):
    B = np.resize(B, A.shape)
    k = np.linspace(-1, 1, 9).reshape(3, 3)
    lhs = conv2d_same(a * A + b * B, k)
    rhs = a * conv2d_same(A, k) + b * conv2d_same(B, k)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_conv_deterministic(rng):
    x = rng.normal(size=(9, 9))
    k = rng.normal(size=(5, 5))
    assert conv2d_same(x, k).tobytes() == conv2d_same(x.copy(), k.copy()).tobytes()


# --- full convolution and its adjoint -----------------------------------------


def test_full_conv_matches_padded_loop(rng):
    x = rng.normal(size=(6, 7))
    k = rng.normal(size=(4, 4))  # even kernels are fine here
    H, W = x.shape
    ref = np.zeros((H + 3, W + 3))
    for u in range(4):
        for v in range(4):
            ref[u : u + H, v : v + W] += k[u, v] * x
    np.testing.assert_allclose(conv2d_full(x, k), ref, atol=1e-12)


def test_full_conv_shapes(rng):
    out = conv2d_full(rng.normal(size=(2, 10, 12)), rng.normal(size=(3, 4, 4)))
    assert out.shape == (2, 3, 13, 15)


def test_correlate_valid_is_adjoint(rng):
    x = rng.normal(size=(8, 9))
    k = rng.normal(size=(4, 4))
    u = rng.normal(size=(11, 12))
    lhs = np.sum(conv2d_full(x, k) * u)
    rhs = np.sum(x * correlate_valid(u, k))
    assert abs(lhs - rhs) < 1e-10 * max(1, abs(lhs))


# --- pooling -------------------------------------------------------------------


def test_pool_constant_input():
    x = np.full((6, 6), 0.3)
    out, _ = max_pool_same(x, 5)
    np.testing.assert_array_equal(out, x)


def test_pool_impulse_dilates():
    x = np.zeros((7, 7))
    x[3, 3] = 1
    out, _ = max_pool_same(x, 3)
    expect = np.zeros((7, 7))
    expect[2:5, 2:5] = 1
    np.testing.assert_array_equal(out, expect)


def test_pool_matches_loop(rng):
    x = rng.normal(size=(9, 9))
    out, route = max_pool_same(x, 5)
    ref, win = pool_loop(x, 5)
    np.testing.assert_array_equal(out, ref)
    r, c = route.winners()
    np.testing.assert_array_equal(r, win[..., 0])
    np.testing.assert_array_equal(c, win[..., 1])


def test_pool_ties_go_to_first_in_row_major():
    x = np.zeros((5, 5))
    x[1, 3] = x[3, 1] = 1.0
    _, route = max_pool_same(x, 5)
    r, c = route.winners()
    assert (r[2, 2], c[2, 2]) == (1, 3)


def test_pool_rejects_even_and_oversized():
    with pytest.raises(ValueError):
        max_pool_same(np.ones((5, 5)), 4)
    with pytest.raises(ValueError, match="too large"):
        max_pool_same(np.ones((3, 6)), 7)


@given(grids, st.sampled_from([1, 3, 5]))
def test_pool_dominates_input(x, p):
    out, route = max_pool_same(x, p)
    assert np.all(out >= x)
    r, c = route.winners()
    rows, cols = np.indices(x.shape)
    assert np.all(np.abs(r - rows) <= p // 2) and np.all(np.abs(c - cols) <= p // 2)
    assert np.all(x[r, c] == out)


# --- gradient routing ------------------------------------------------------------


def test_route_zero_upstream(rng):
    _, route = max_pool_same(rng.normal(size=(6, 6)), 3)
    np.testing.assert_array_equal(route_gradient(np.zeros((6, 6)), route), 0)


def test_route_single_cell(rng):
    x = rng.normal(size=(6, 6))
    _, route = max_pool_same(x, 3)
    g = np.zeros((6, 6))
    g[2, 3] = 1
    out = route_gradient(g, route)
    r, c = route.winners()
    assert out[r[2, 3], c[2, 3]] == 1 and out.sum() == 1


def test_route_accumulates():
    x = np.zeros((5, 5))
    x[2, 2] = 1
    _, route = max_pool_same(x, 3)
    out = route_gradient(np.ones((5, 5)), route)
    assert out[2, 2] == 9


def test_route_rejects_mismatch(rng):
    _, route = max_pool_same(rng.normal(size=(6, 6)), 3)
    with pytest.raises(ValueError):
        route_gradient(np.ones((5, 6)), route)


def test_route_matches_finite_differences(rng):
    x = rng.permutation(81).reshape(9, 9) / 81.0  # distinct values, no ties
    u = rng.normal(size=(9, 9))
    _, route = max_pool_same(x, 3)
    g = route_gradient(u, route)
    h = 1e-6
    for i, j in [(0, 0), (4, 4), (2, 7), (8, 1)]:
        xp, xm = x.copy(), x.copy()
        xp[i, j] += h
        xm[i, j] -= h
        num = (np.sum(max_pool_same(xp, 3)[0] * u) - np.sum(max_pool_same(xm, 3)[0] * u)) / (2 * h)
        assert abs(num - g[i, j]) < 1e-6


@given(arrays(np.float64, (6, 6), elements=st.floats(-1, 1, allow_nan=False), unique=True))
def test_route_is_adjoint_of_pool(x):
    # pooling is linear in x for a fixed route: <pool(x), u> = <x, route(u)>
    u = np.cos(np.arange(36.0)).reshape(6, 6)
    out, route = max_pool_same(x, 3)
    assert abs(np.sum(out * u) - np.sum(x * route_gradient(u, route))) < 1e-12


def test_pool_batched(rng):
    x = rng.normal(size=(2, 3, 7, 8))
    out, route = max_pool_same(x, 3)
    u = rng.normal(size=x.shape)
    g = route_gradient(u, route)
    for a in range(2):
        for b in range(3):
            o1, r1 = max_pool_same(x[a, b], 3)
            np.testing.assert_array_equal(out[a, b], o1)
            np.testing.assert_allclose(g[a, b], route_gradient(u[a, b], r1))


# --- Gaussian kernel ----------------------------------------------------------------


@given(st.floats(0.3, 5), st.sampled_from([1, 3, 5, 7, 9]))
def test_gaussian_peak_and_symmetry(sigma, size):
    k = gaussian_kernel(sigma, size)
    assert k[size // 2, size // 2] == 1.0
    np.testing.assert_array_equal(k, k[::-1])
    np.testing.assert_array_equal(k, k[:, ::-1])
    np.testing.assert_array_equal(k, k.T)


def test_gaussian_offset_value():
    k = gaussian_kernel(2.0, 7)
    assert k[4, 3] == pytest.approx(np.exp(-1 / 8), abs=1e-15)
    assert k[4, 3] == pytest.approx(0.8825, abs=1e-4)


def test_gaussian_delta_limit():
    k = gaussian_kernel(0.1, 3)
    off = k.copy()
    off[1, 1] = 0
    assert off.max() < 1e-10


@pytest.mark.parametrize("sigma,size", [(0, 3), (-1, 3), (1, 4), (1, 0)])
def test_gaussian_rejects(sigma, size):
    with pytest.raises(ValueError):
        gaussian_kernel(sigma, size)
