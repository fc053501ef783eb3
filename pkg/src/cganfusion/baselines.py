"""Non-learned fusion predictors used as reference rows in evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import Raster, bilinear_resample, check_same_grid, joint_mask


@dataclass(frozen=True)
class FusionInput:
    l_t: Raster
    m_t: Raster
    m_tp: Raster

    def __post_init__(self):
        check_same_grid(self.l_t, self.m_t, self.m_tp)

    @property
    def mask(self) -> np.ndarray:
        return joint_mask(self.l_t, self.m_t, self.m_tp)


def fuse_homogeneous(inp: FusionInput, clip: bool = True) -> Raster:
    """Homogeneous-pixel fusion: carry the coarse temporal change onto the last fine image.

    ``l_tp = m_tp + l_t - m_t`` per pixel and band, optionally clipped to [0, 1].
    """
    mask = inp.mask
    out = inp.m_tp.data.astype(np.float64) + inp.l_t.data - inp.m_t.data
    if clip:
        out = np.clip(out, 0.0, 1.0)
    out = np.where(mask[None], out, 0.0)
    return Raster(out.astype(inp.l_t.data.dtype, copy=False), mask, inp.l_t.bands)


def baseline_bilinear(m_tp_coarse: Raster, fine_dims: tuple[int, int]) -> Raster:
    return bilinear_resample(m_tp_coarse, *fine_dims)
