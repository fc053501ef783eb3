"""Real-data ingestion of co-registered fine/coarse scenes with QA maps.

Arrays are read from ``.npy``, ``.npz`` or ``.rfr`` files directly.
GeoTIFF and other georeferenced containers go through ``rasterio``, which is
imported lazily and only here.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Sequence

import numpy as np

from ..raster import N_BANDS, Raster, bilinear_resample
from . import rfr
from .pipeline import DataError, ScenePair


def read_array(path: str | Path) -> np.ndarray:
    """Read a raster file as a float64 ``(B, H, W)`` array."""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".npy":
            arr = np.load(path)
        elif suffix == ".npz":
            with np.load(path) as z:
                arr = z["data"] if "data" in z.files else z[z.files[0]]
        elif suffix == ".rfr":
            arr = rfr.read_blob(path)
        else:
            arr = _read_georaster(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read raster {path}: {e}") from None
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"{path}: expected a 2-D or 3-D raster, got shape {arr.shape}")
    return arr


def _read_georaster(path: Path) -> np.ndarray:
    try:
        import rasterio
    except ImportError:
        raise DataError(f"{path}: reading {path.suffix or 'this'} files requires the optional 'rasterio' package") from None
    with rasterio.open(path) as src:
        return src.read(masked=False)


def select_bands(arr: np.ndarray, band_indices: Sequence[int] | None, path) -> np.ndarray:
    if band_indices is None:
        if arr.shape[0] != N_BANDS:
            raise DataError(
                f"{path}: unknown band layout ({arr.shape[0]} bands); pass band indices for (NIR, R, G, B)"
            )
        return arr
    if len(band_indices) != N_BANDS or not all(0 <= i < arr.shape[0] for i in band_indices):
        raise DataError(f"{path}: band indices {list(band_indices)} invalid for {arr.shape[0]}-band raster")
    return arr[list(band_indices)]


def ingest_scene_pair(
    fine_image_file: str | Path,
    coarse_image_file: str | Path,
    qa_file: str | Path | None,
    date: dt.date | str,
    *,
    scene_id: str = "scene",
    fine_bands: Sequence[int] | None = None,
    coarse_bands: Sequence[int] | None = None,
    fine_scale: float = 1.0,
    fine_offset: float = 0.0,
    coarse_scale: float = 1.0,
    coarse_offset: float = 0.0,
    resample: bool = False,
) -> ScenePair:
    """Pair a fine and a coarse scene on the fine grid.

    The QA file may hold one or more planes; a pixel is valid only where every
    plane is zero. Non-finite reflectance also invalidates a pixel. Values are
    scaled as ``value * scale + offset`` and clipped to [0, 1]. With
    ``resample`` the coarse image may be supplied at native resolution and is
    bilinearly brought onto the fine grid first.
    """
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    fine = select_bands(read_array(fine_image_file), fine_bands, fine_image_file) * fine_scale + fine_offset
    coarse = select_bands(read_array(coarse_image_file), coarse_bands, coarse_image_file) * coarse_scale + coarse_offset
    h, w = fine.shape[1:]

    coarse_valid = np.all(np.isfinite(coarse), axis=0)
    if coarse.shape[1:] != (h, w):
        if not resample:
            raise DataError(
                f"grid mismatch: fine {fine.shape[1:]} vs coarse {coarse.shape[1:]} (use resample to regrid)"
            )
        r = bilinear_resample(Raster(np.where(coarse_valid, coarse, 0.0), coarse_valid), h, w)
        coarse, coarse_valid = r.data, r.mask

    mask = np.all(np.isfinite(fine), axis=0) & coarse_valid
    if qa_file is not None:
        qa = read_array(qa_file)
        if qa.shape[1:] != (h, w):
            raise DataError(f"QA map {qa.shape[1:]} does not match scene grid {(h, w)}")
        mask &= np.all(qa == 0, axis=0)

    fine = np.where(mask, np.clip(fine, 0.0, 1.0), 0.0).astype(np.float32)
    coarse = np.where(mask, np.clip(coarse, 0.0, 1.0), 0.0).astype(np.float32)
    return ScenePair(Raster(fine, mask), Raster(coarse, mask), date, scene_id)
