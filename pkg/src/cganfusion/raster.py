"""Raster container, band conventions and grid resampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Canonical band order for everything model-facing.
BAND_ORDER: tuple[str, ...] = ("NIR", "R", "G", "B")
N_BANDS = len(BAND_ORDER)


class InvalidInputError(ValueError):
    """Raised when an input raster or argument violates a contract."""


@dataclass(frozen=True)
class BandSet:
    names: tuple[str, ...] = BAND_ORDER

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise InvalidInputError(f"duplicate band names: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def is_canonical(self) -> bool:
        return self.names == BAND_ORDER


@dataclass(frozen=True)
class Raster:
    """Multi-band reflectance image on a regular grid.

    ``data`` is ``(B, H, W)``; ``mask`` is ``(H, W)`` and is ``True`` where the
    pixel is usable. Invalid pixels may hold any value (including NaN).
    """

    data: np.ndarray
    mask: np.ndarray = None
    bands: BandSet = field(default_factory=BandSet)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise InvalidInputError(f"raster data must be (B, H, W), got shape {data.shape}")
        b, h, w = data.shape
        if h < 1 or w < 1 or b < 1:
            raise InvalidInputError(f"empty raster of shape {data.shape}")
        mask = np.ones((h, w), dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != (h, w):
            raise InvalidInputError(f"mask shape {mask.shape} does not match raster grid {(h, w)}")
        if len(self.bands) != b:
            if self.bands == BandSet() and b != N_BANDS:
                object.__setattr__(self, "bands", BandSet(tuple(f"b{i}" for i in range(b))))
            else:
                raise InvalidInputError(f"{b} bands in data but band set has {len(self.bands)}")
        if not np.all(np.isfinite(data[:, mask])):
            raise InvalidInputError("non-finite reflectance under a valid mask")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def n_bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def valid_fraction(self) -> float:
        return float(self.mask.mean())

    def with_data(self, data: np.ndarray, mask: np.ndarray | None = None) -> "Raster":
        return Raster(data, self.mask if mask is None else mask, self.bands)

    def clipped(self, lo: float = 0.0, hi: float = 1.0) -> "Raster":
        return self.with_data(np.clip(self.data, lo, hi))


def check_same_grid(*rasters: Raster) -> None:
    first = rasters[0]
    for r in rasters[1:]:
        if r.shape != first.shape:
            raise InvalidInputError(f"shape mismatch: {first.shape} vs {r.shape}")


def joint_mask(*rasters: Raster) -> np.ndarray:
    check_same_grid(*rasters)
    mask = rasters[0].mask.copy()
    for r in rasters[1:]:
        mask &= r.mask
    return mask


def _source_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-centre mapping, clamped at the edges.
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def bilinear_resample(r: Raster, target_h: int, target_w: int) -> Raster:
    """Resample onto a ``target_h`` x ``target_w`` grid spanning the same extent.

    Data is interpolated bilinearly between pixel centres with edge clamping;
    the mask is resampled by nearest neighbour. Invalid source pixels are
    filled with the mean of valid ones before interpolating so they cannot
    inject NaNs.
    """
    if target_h < 1 or target_w < 1:
        raise InvalidInputError(f"target dims must be >= 1, got {(target_h, target_w)}")
    if not r.mask.any():
        raise InvalidInputError("cannot resample a raster with no valid pixels")
    if (target_h, target_w) == (r.height, r.width):
        return Raster(r.data.copy(), r.mask.copy(), r.bands)

    data = r.data.astype(np.float64)
    if not r.mask.all():
        fill = data[:, r.mask].mean(axis=1)
        data = np.where(r.mask[None], data, fill[:, None, None])

    y0, y1, wy = _source_coords(target_h, r.height)
    x0, x1, wx = _source_coords(target_w, r.width)
    wy = wy[:, None]
    wx = wx[None, :]
    top = data[:, y0][:, :, x0] * (1 - wx) + data[:, y0][:, :, x1] * wx
    bot = data[:, y1][:, :, x0] * (1 - wx) + data[:, y1][:, :, x1] * wx
    out = top * (1 - wy) + bot * wy

    mask = r.mask[_nearest_index(target_h, r.height)][:, _nearest_index(target_w, r.width)]
    return Raster(out.astype(r.data.dtype, copy=False), mask, r.bands)


def block_mean(data: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor`` x ``factor`` blocks of a ``(B, H, W)`` array."""
    b, h, w = data.shape
    if factor < 1 or h % factor or w % factor:
        raise InvalidInputError(f"factor {factor} must divide grid {(h, w)}")
    return data.reshape(b, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def replicate_upsample(data: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(data, factor, axis=1), factor, axis=2)
