"""Scene pairing, patch tiling, triplet construction and location splits."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..raster import BAND_ORDER, InvalidInputError, Raster, check_same_grid


class DataError(Exception):
    """Problem with input data or an on-disk dataset."""


@dataclass(frozen=True)
class ScenePair:
    landsat: Raster
    modis: Raster
    date: dt.date
    scene_id: str = "scene"

    def __post_init__(self):
        check_same_grid(self.landsat, self.modis)
        if self.landsat.bands != self.modis.bands:
            raise InvalidInputError("fine and coarse rasters use different band sets")

    @property
    def mask(self) -> np.ndarray:
        return self.landsat.mask & self.modis.mask


@dataclass(frozen=True)
class PatchRecord:
    """One training example: previous fine patch, current coarse patch, current fine target.

    ``m_prev`` (coarse patch at the previous date) is carried for the
    homogeneous-pixel baseline; the model never sees it.
    """

    location_id: str
    date_index: int
    l_prev: Raster
    m_curr: Raster
    l_target: Raster
    date: str | None = None
    prev_date: str | None = None
    m_prev: Raster | None = None

    def __post_init__(self):
        check_same_grid(self.l_prev, self.m_curr, self.l_target)
        if self.m_prev is not None:
            check_same_grid(self.l_prev, self.m_prev)
        if self.date_index < 1:
            raise InvalidInputError(f"date_index must be >= 1, got {self.date_index}")

    @property
    def valid_fraction(self) -> tuple[float, float, float]:
        return (self.l_prev.valid_fraction(), self.m_curr.valid_fraction(), self.l_target.valid_fraction())

    @property
    def mask(self) -> np.ndarray:
        return self.l_prev.mask & self.m_curr.mask & self.l_target.mask

    def conditioning(self) -> np.ndarray:
        return conditioning(self.l_prev, self.m_curr)


def conditioning(l_prev: Raster, m_curr: Raster) -> np.ndarray:
    """Band-axis stack: channels 0-3 previous fine image, 4-7 current coarse image."""
    check_same_grid(l_prev, m_curr)
    return np.concatenate([l_prev.data, m_curr.data], axis=0)


def _crop(r: Raster, y: int, x: int, size: int) -> Raster:
    return Raster(r.data[:, y : y + size, x : x + size].copy(), r.mask[y : y + size, x : x + size].copy(), r.bands)


def tile_origins(h: int, w: int, size: int, stride: int | None = None) -> list[tuple[int, int, int, int]]:
    """Row-major ``(row, col, y0, x0)`` for every full tile; partial edge tiles are dropped."""
    stride = size if stride is None else stride
    if stride < size:
        raise InvalidInputError(f"stride {stride} < size {size} would overlap tiles")
    if size > min(h, w):
        raise InvalidInputError(f"scene {h}x{w} smaller than one {size}x{size} patch")
    rows = (h - size) // stride + 1
    cols = (w - size) // stride + 1
    return [(r, c, r * stride, c * stride) for r in range(rows) for c in range(cols)]


def location_id(scene_id: str, row: int, col: int) -> str:
    return f"{scene_id}-r{row:03d}c{col:03d}"


def extract_patches(scene: ScenePair, size: int = 256, stride: int | None = None) -> list[tuple[str, ScenePair]]:
    out = []
    for row, col, y, x in tile_origins(scene.landsat.height, scene.landsat.width, size, stride):
        patch = ScenePair(_crop(scene.landsat, y, x, size), _crop(scene.modis, y, x, size), scene.date, scene.scene_id)
        out.append((location_id(scene.scene_id, row, col), patch))
    return out


def build_triplets(
    series: Mapping[str, Sequence[ScenePair]],
    qa_threshold: float = 0.0,
) -> list[PatchRecord]:
    """One record per consecutive date pair of each location.

    A record is dropped when any of its three constituents has a valid
    fraction below ``1 - qa_threshold``.
    """
    if not 0.0 <= qa_threshold <= 1.0:
        raise InvalidInputError(f"qa_threshold must lie in [0, 1], got {qa_threshold}")
    min_valid = 1.0 - qa_threshold
    records = []
    for loc in sorted(series):
        pairs = list(series[loc])
        if len(pairs) < 2:
            raise InvalidInputError(f"location {loc!r} has {len(pairs)} date(s); need at least 2")
        dates = [p.date for p in pairs]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise InvalidInputError(f"dates of location {loc!r} are not strictly increasing")
        for i in range(1, len(pairs)):
            prev, cur = pairs[i - 1], pairs[i]
            rec = PatchRecord(
                location_id=loc,
                date_index=i,
                l_prev=prev.landsat,
                m_curr=cur.modis,
                l_target=cur.landsat,
                date=cur.date.isoformat(),
                prev_date=prev.date.isoformat(),
                m_prev=prev.modis,
            )
            if min(rec.valid_fraction) + 1e-12 >= min_valid:
                records.append(rec)
    return records


SPLITS = ("train", "val", "test")


def split_counts(n: int, ratios: Sequence[float] = (0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """Floor the train and validation shares; the test split takes the remainder."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInputError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


@dataclass
class RecordEntry:
    file: str
    sha256: str
    location_id: str
    split: str
    date_index: int
    date: str | None
    prev_date: str | None
    valid_fraction: tuple[float, float, float]
    shape: tuple[int, int, int]


@dataclass
class DatasetManifest:
    """Split assignment plus, once written, the per-record file references."""

    splits: dict[str, str]
    split_seed: int
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    patch_size: int = 256
    stride: int = 256
    band_order: tuple[str, ...] = BAND_ORDER
    qa_threshold: float = 0.0
    records: list[RecordEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def locations(self, split: str | None = None) -> list[str]:
        return sorted(loc for loc, s in self.splits.items() if split is None or s == split)

    @property
    def location_counts(self) -> dict[str, int]:
        return {s: len(self.locations(s)) for s in SPLITS}

    @property
    def record_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(SPLITS, 0)
        for r in self.records:
            counts[r.split] += 1
        return counts


def split_locations(
    location_ids: Sequence[str], ratios: Sequence[float] = (0.70, 0.15, 0.15), seed: int = 0
) -> DatasetManifest:
    """Deterministically assign every location to train/val/test."""
    ids = sorted(set(location_ids))
    if len(ids) < 3:
        raise InvalidInputError(f"need at least 3 locations to split, got {len(ids)}")
    n_train, n_val, _ = split_counts(len(ids), ratios)
    order = np.random.default_rng(seed).permutation(len(ids))
    assignment = {}
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        assignment[ids[idx]] = split
    return DatasetManifest(splits=assignment, split_seed=seed, split_ratios=tuple(ratios))
