import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cganfusion.baselines import FusionInput, baseline_bilinear, fuse_homogeneous
from cganfusion.data.synth import SynthConfig, synth_scene_series
from cganfusion.raster import InvalidInputError, Raster
from oracles import bilinear_resize


def _inp(l_t, m_t, m_tp, mask=None):
    return FusionInput(Raster(l_t, mask), Raster(m_t), Raster(m_tp))


def test_no_coarse_change_returns_last_fine(rng):
    l_t, m = rng.random((4, 8, 8)), rng.random((4, 8, 8))
    out = fuse_homogeneous(_inp(l_t, m, m))
    np.testing.assert_allclose(out.data, l_t, atol=1e-15)


def test_uniform_coarse_shift_is_added(rng):
    l_t = 0.2 + 0.5 * rng.random((4, 8, 8))
    m_t = rng.random((4, 8, 8))
    out = fuse_homogeneous(_inp(l_t, m_t, m_t + 0.05))
    np.testing.assert_allclose(out.data, l_t + 0.05, atol=1e-12)


def test_matches_scalar_loop(rng):
    l_t, m_t, m_tp = (rng.random((4, 8, 8)) for _ in range(3))
    out = fuse_homogeneous(_inp(l_t, m_t, m_tp)).data
    for b in range(4):
        for i in range(8):
            for j in range(8):
                v = float(m_tp[b, i, j]) + float(l_t[b, i, j]) - float(m_t[b, i, j])
                assert out[b, i, j] == min(max(v, 0.0), 1.0)


@settings(max_examples=30, deadline=None)
@given(shift=st.floats(-0.2, 0.2))
def test_equivariant_to_constant_shift(shift):
    r = np.random.default_rng(5)
    l_t, m_t, m_tp = (0.3 + 0.3 * r.random((4, 6, 6)) for _ in range(3))
    base = fuse_homogeneous(_inp(l_t, m_t, m_tp), clip=False).data
    moved = fuse_homogeneous(_inp(l_t + shift, m_t + shift, m_tp + shift), clip=False).data
    np.testing.assert_allclose(moved, base + shift, atol=1e-12)


def test_mask_is_intersection(rng):
    a = np.ones((8, 8), bool)
    a[0] = False
    b = np.ones((8, 8), bool)
    b[:, 0] = False
    inp = FusionInput(Raster(rng.random((4, 8, 8)), a), Raster(rng.random((4, 8, 8)), b), Raster(rng.random((4, 8, 8))))
    out = fuse_homogeneous(inp)
    assert np.array_equal(out.mask, a & b)
    assert not np.any(out.mask & ~(a & b))


def test_shape_mismatch(rng):
    with pytest.raises(InvalidInputError):
        _inp(rng.random((4, 8, 8)), rng.random((4, 8, 8)), rng.random((4, 8, 9)))


def test_exact_on_single_field_synthetic_scene():
    cfg = SynthConfig(scenes=1, size=64, fields=1, texture=0.0, cloud_probability=0.0, dates=5, seed=11)
    series = synth_scene_series(cfg, 0)
    for prev, cur in zip(series, series[1:]):
        out = fuse_homogeneous(FusionInput(prev.landsat, prev.modis, cur.modis))
        assert np.max(np.abs(out.data - cur.landsat.data)) <= 1e-6


class TestBilinearBaseline:
    def test_constant(self):
        out = baseline_bilinear(Raster(np.full((4, 4, 4), 0.25)), (32, 32))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-15)

    def test_identity_on_fine_grid(self, rng):
        x = rng.random((4, 16, 16))
        assert np.array_equal(baseline_bilinear(Raster(x), (16, 16)).data, x)

    def test_4x_matches_oracle(self, rng):
        x = rng.random((4, 4, 4))
        out = baseline_bilinear(Raster(x), (16, 16))
        for b in range(4):
            np.testing.assert_allclose(out.data[b], bilinear_resize(x[b], 16, 16), atol=1e-12)
