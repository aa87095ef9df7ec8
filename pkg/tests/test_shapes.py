import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shape_fixtures import SIDE, disk, dissimilar_set, ladder, shifted_pair, two_group_set
from shapeprior.shapes import (
    CwSsimConfig,
    ShapeSet,
    SsimConfig,
    complex_wavelet_coeffs,
    cw_ssim,
    eliminate_shapes,
    load_shape_set,
    save_shape_set,
    shape_learning_gradient,
    shape_learning_loss,
    similarity_matrix,
    ssim,
    ssim_gradient,
)

# subband energy / spatial energy for rng(2024).random((20, 20)); frozen
# from the transform itself as a regression value
ENERGY_RATIO_20 = 0.18794359358997204

shape_grids = arrays(np.float64, (12, 12), elements=st.floats(0, 1, allow_nan=False))


def nonzero(g):
    return g if g.any() else g + 0.5


def bands(c):
    return [b for level in c for b in level]


# --- ShapeSet ---------------------------------------------------------------


def test_shapeset_checks():
    with pytest.raises(ValueError, match="binary"):
        ShapeSet(np.full((1, 4, 4), 0.5), "expert")
    ShapeSet(np.full((1, 4, 4), 0.5), "learnable")
    with pytest.raises(ValueError, match="square"):
        ShapeSet(np.zeros((2, 4, 5)))
    with pytest.raises(ValueError):
        ShapeSet(np.zeros((1, 4, 4)), "other")


def test_shape_io_roundtrip(tmp_path):
    s = ShapeSet(dissimilar_set(), "expert")
    save_shape_set(s, tmp_path)
    back = load_shape_set(tmp_path)
    np.testing.assert_array_equal(back.grids, s.grids)
    with pytest.raises(FileNotFoundError):
        load_shape_set(tmp_path / "missing")


def test_load_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        load_shape_set(tmp_path)


# --- wavelet coefficients -------------------------------------------------------


def test_coeffs_zero_and_layout():
    c = complex_wavelet_coeffs(np.zeros((SIDE, SIDE)))
    assert len(c) == 2 and all(len(level) == 6 for level in c)
    assert all(not b.any() for b in bands(c))
    assert c[0][0].shape == (20, 20) and c[1][0].shape == (10, 10)


def test_coeffs_linear(rng):
    x = rng.random((SIDE, SIDE))
    for a, b in zip(bands(complex_wavelet_coeffs(x)), bands(complex_wavelet_coeffs(-2.5 * x))):
        np.testing.assert_allclose(b, -2.5 * a, atol=1e-12)


def test_coeffs_energy_ratio_frozen():
    x = np.random.default_rng(2024).random((20, 20))
    e = sum(np.sum(np.abs(b) ** 2) for b in bands(complex_wavelet_coeffs(x)))
    assert e / np.sum(x**2) == pytest.approx(ENERGY_RATIO_20, rel=1e-9)


def test_coeffs_too_small():
    with pytest.raises(ValueError, match="too small"):
        complex_wavelet_coeffs(np.ones((3, 3)), CwSsimConfig(levels=2))


def test_cw_config_checks():
    for kw in ({"levels": 0}, {"orientations": 1}, {"K": 0}):
        with pytest.raises(ValueError):
            CwSsimConfig(**kw)


# --- similarity values ------------------------------------------------------------


def test_self_similarity():
    d = disk()
    assert abs(ssim(d, d) - 1) < 1e-9
    assert abs(cw_ssim(d, d) - 1) < 1e-9


def test_cw_ssim_both_zero():
    z = np.zeros((SIDE, SIDE))
    assert cw_ssim(z, z) == 1.0


def test_ssim_constant_patches():
    a = np.full((8, 8), 0.2)
    b = np.full((8, 8), 0.4)
    v = ssim(a, b, SsimConfig(C1=1e-4))
    assert v == pytest.approx((2 * 0.08 + 1e-4) / (0.04 + 0.16 + 1e-4), abs=1e-12)
    assert v == pytest.approx(0.8005, abs=1e-3)


def test_mismatched_dimensions():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        cw_ssim(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        ssim_gradient(np.zeros((4, 4)), np.zeros((5, 5)))


@given(shape_grids, shape_grids)
def test_symmetry(a, b):
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    assert abs(cw_ssim(a, b) - cw_ssim(b, a)) < 1e-12


@given(shape_grids)
def test_self_similarity_property(a):
    a = nonzero(a)
    assert abs(ssim(a, a) - 1) < 1e-9
    assert abs(cw_ssim(a, a) - 1) < 1e-9


@given(shape_grids, shape_grids)
def test_ranges(a, b):
    assert -1 < ssim(a, b) <= 1 + 1e-12
    assert 0 <= cw_ssim(a, b) <= 1 + 1e-12


@pytest.mark.parametrize("measure", [ssim, cw_ssim])
def test_case_ladder_strictly_decreasing(measure):
    base, cases = ladder()
    values = [measure(base, c) for c in cases]
    assert all(x > y for x, y in zip(values, values[1:])), values


def test_cw_ssim_tolerates_shift():
    a, b = shifted_pair()
    assert cw_ssim(a, b) > ssim(a, b)


# --- SSIM gradient -------------------------------------------------------------------


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))


def test_ssim_gradient_zero_at_identity(rng):
    s = rng.random((10, 10))
    assert np.linalg.norm(ssim_gradient(s, s)) < 1e-8


@pytest.mark.parametrize("side,window", [(10, 8), (8, 8), (12, 5)])
def test_ssim_gradient_matches_fd(rng, side, window):
    cfg = SsimConfig(window_size=window)
    sl, sr = rng.random((side, side)), rng.random((side, side))
    g = ssim_gradient(sl, sr, cfg)
    n = fd_gradient(lambda x: ssim(x, sr, cfg), sl)
    assert rel_err(g, n) < 1e-4


def test_ssim_gradient_argument_swap(rng):
    sl, sr = rng.random((9, 9)), rng.random((9, 9))
    n = fd_gradient(lambda x: ssim(sr, x), sl)
    assert rel_err(ssim_gradient(sl, sr), n) < 1e-4


# --- shape learning term ------------------------------------------------------------


def test_shape_learning_zero_gamma(rng):
    L = rng.random((2, 8, 8))
    assert shape_learning_loss(L, rng.random((2, 8, 8)), 0.0) == 0.0


def test_shape_learning_identity_single():
    d = disk()[None]
    assert shape_learning_loss(d, d, 3.0) == pytest.approx(-3.0, abs=1e-12)


def test_shape_learning_compositional(rng):
    L, R = rng.random((2, 8, 8)), rng.random((2, 8, 8))
    expect = -1.5 * sum(ssim(L[i], R[j]) for i in range(2) for j in range(2))
    assert shape_learning_loss(L, R, 1.5) == pytest.approx(expect, abs=1e-12)


def test_shape_learning_cardinality():
    with pytest.raises(ValueError, match="cardinality"):
        shape_learning_loss(np.zeros((2, 8, 8)), np.zeros((3, 8, 8)), 1.0)


def test_shape_learning_gradient_matches_fd(rng):
    L, R = rng.random((2, 8, 8)), rng.random((2, 8, 8))
    g = shape_learning_gradient(L, R, 2.0)
    n = fd_gradient(lambda x: shape_learning_loss(x, R, 2.0), L)
    assert rel_err(g, n) < 1e-4


# --- elimination ------------------------------------------------------------------------


def test_eliminate_identical():
    ref = eliminate_shapes(np.stack([disk()] * 5))
    assert len(ref.grids) == 1 and ref.kind == "reference"


def test_eliminate_dissimilar_keeps_all():
    s = dissimilar_set()
    m = similarity_matrix(s)
    assert np.all(m[~np.eye(4, dtype=bool)] < 0.8)
    ref = eliminate_shapes(s, matrix=m)
    np.testing.assert_array_equal(ref.grids, s)


def test_eliminate_two_groups():
    s = two_group_set()
    ref = eliminate_shapes(s)
    # representatives are the first member of each group
    np.testing.assert_array_equal(ref.grids, s[[0, 1]])


def test_eliminate_idempotent():
    for s in (two_group_set(), dissimilar_set(), np.stack([disk()] * 3)):
        once = eliminate_shapes(s)
        twice = eliminate_shapes(once)
        np.testing.assert_array_equal(once.grids, twice.grids)


def test_eliminate_empty():
    with pytest.raises(ValueError):
        eliminate_shapes(np.zeros((0, 8, 8)))


def test_similarity_matrix_properties():
    m = similarity_matrix(two_group_set())
    np.testing.assert_array_equal(np.diag(m), 1.0)
    np.testing.assert_array_equal(m, m.T)
