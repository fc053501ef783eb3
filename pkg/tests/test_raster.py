import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cganfusion.raster import (
    BAND_ORDER,
    BandSet,
    InvalidInputError,
    Raster,
    bilinear_resample,
    block_mean,
    replicate_upsample,
)
from oracles import bilinear_resize


def test_band_order_is_canonical():
    assert BAND_ORDER == ("NIR", "R", "G", "B")
    assert BandSet().is_canonical
    assert BandSet().index("R") == 1


def test_raster_validates_shapes():
    with pytest.raises(InvalidInputError):
        Raster(np.zeros((4, 3, 3)), np.ones((3, 4), bool))
    with pytest.raises(InvalidInputError):
        Raster(np.zeros((4, 0, 3)))
    with pytest.raises(InvalidInputError):
        Raster(np.full((4, 2, 2), np.nan))
    # NaN is allowed where the mask is false
    r = Raster(np.full((4, 2, 2), np.nan), np.zeros((2, 2), bool))
    assert r.valid_fraction() == 0.0


def test_resample_constant():
    r = Raster(np.full((4, 8, 8), 0.3))
    out = bilinear_resample(r, 32, 32)
    assert out.shape == (4, 32, 32)
    np.testing.assert_allclose(out.data, 0.3, rtol=0, atol=1e-15)
    assert out.mask.all()


def test_resample_identity_is_bit_exact(rng):
    data = rng.random((4, 9, 7)).astype(np.float32)
    out = bilinear_resample(Raster(data), 9, 7)
    assert out.data.dtype == data.dtype
    assert np.array_equal(out.data, data)


def test_resample_2x2_to_4x4_matches_oracle():
    img = np.array([[0.0, 1.0], [0.0, 1.0]])
    out = bilinear_resample(Raster(np.stack([img] * 4)), 4, 4)
    expected = bilinear_resize(img, 4, 4)
    # frozen: half-pixel centres give columns 0, 1/4, 3/4, 1
    np.testing.assert_allclose(expected, np.tile([0.0, 0.25, 0.75, 1.0], (4, 1)), atol=1e-15)
    for b in range(4):
        np.testing.assert_allclose(out.data[b], expected, atol=1e-12)


def test_resample_random_matches_oracle(rng):
    img = rng.random((5, 6))
    out = bilinear_resample(Raster(img[None]), 13, 9)
    np.testing.assert_allclose(out.data[0], bilinear_resize(img, 13, 9), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(-1, 1), b=st.floats(-1, 1), c=st.floats(-1, 1),
    h=st.integers(2, 9), w=st.integers(2, 9), factor=st.integers(2, 4),
)
def test_resample_reproduces_plane_in_interior(a, b, c, h, w, factor):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = a + b * yy + c * xx
    out = bilinear_resample(Raster(img[None]), h * factor, w * factor).data[0]
    ys = (np.arange(h * factor) + 0.5) / factor - 0.5
    xs = (np.arange(w * factor) + 0.5) / factor - 0.5
    inside_y = (ys >= 0) & (ys <= h - 1)
    inside_x = (xs >= 0) & (xs <= w - 1)
    plane = a + b * ys[:, None] + c * xs[None, :]
    sel = inside_y[:, None] & inside_x[None, :]
    assert np.max(np.abs(out - plane)[sel]) <= 1e-6


def test_resample_mask_nearest():
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    out = bilinear_resample(Raster(np.ones((1, 2, 2)), mask), 4, 4)
    expected = np.zeros((4, 4), bool)
    expected[:2, :2] = True
    assert np.array_equal(out.mask, expected)


def test_resample_errors():
    with pytest.raises(InvalidInputError):
        bilinear_resample(Raster(np.ones((4, 2, 2)), np.zeros((2, 2), bool)), 4, 4)
    with pytest.raises(InvalidInputError):
        bilinear_resample(Raster(np.ones((4, 2, 2))), 0, 4)


def test_block_mean_of_constant_is_constant():
    data = np.full((4, 16, 16), 0.42)
    np.testing.assert_allclose(block_mean(data, 8), 0.42)
    with pytest.raises(InvalidInputError):
        block_mean(data, 5)


def test_block_mean_then_replicate_roundtrip(rng):
    cells = rng.random((4, 3, 5))
    fine = replicate_upsample(cells, 4)
    assert np.max(np.abs(replicate_upsample(block_mean(fine, 4), 4) - fine)) <= 1e-15
