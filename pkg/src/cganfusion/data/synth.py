"""Synthetic paired fine/coarse reflectance time series.

Each location is a mosaic of polygonal fields (Voronoi cells). Every field
belongs to a land-cover class whose reflectance follows a smooth seasonal
curve per band. The coarse image is the block mean of the fine image at the
coarse factor, brought back onto the fine grid. Clouds are random
rectangles flagged invalid in both sensors.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..raster import InvalidInputError, Raster, bilinear_resample, block_mean, replicate_upsample
from .dataset import write_dataset
from .pipeline import ScenePair, build_triplets, extract_patches, split_locations

# Per-class (NIR, R, G, B) bare reflectance and response to green-up.
_CLASSES = {
    "crop_summer": ((0.22, 0.16, 0.12, 0.09), (0.30, -0.11, -0.03, -0.05), 180.0, 35.0),
    "crop_winter": ((0.24, 0.18, 0.13, 0.10), (0.28, -0.12, -0.03, -0.05), 130.0, 40.0),
    "forest": ((0.25, 0.05, 0.07, 0.04), (0.12, -0.02, 0.01, -0.01), 190.0, 70.0),
    "urban": ((0.20, 0.15, 0.13, 0.12), (0.00, 0.00, 0.00, 0.00), 180.0, 60.0),
    "grass": ((0.26, 0.09, 0.10, 0.06), (0.16, -0.04, 0.00, -0.02), 150.0, 60.0),
}
CLOUD_REFLECTANCE = 0.85


@dataclass(frozen=True)
class SynthConfig:
    scenes: int = 60
    size: int = 64  # scene height and width in fine pixels
    patch_size: int = 64
    dates: int = 8
    fields: float = 64.0  # mean number of fields per 64x64 area (64: about one per 8x8 coarse cell)
    phenology_amplitude: float = 1.0
    coarse_factor: int = 8
    cloud_probability: float = 0.1
    texture: float = 0.01  # static per-pixel reflectance noise (std)
    coarse_upsample: str = "bilinear"  # or "nearest"
    field_grid: int = 0  # snap field boundaries to this cell size; 0 disables
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    qa_threshold: float = 0.0
    start_date: str = "2013-04-01"
    seed: int = 0

    def __post_init__(self):
        if self.size < 1 or self.dates < 2 or self.scenes < 1:
            raise InvalidInputError("degenerate synthetic dimensions")
        if self.coarse_factor < 1 or self.size % self.coarse_factor:
            raise InvalidInputError(f"coarse factor {self.coarse_factor} must divide size {self.size}")
        if self.field_grid and self.size % self.field_grid:
            raise InvalidInputError(f"field grid {self.field_grid} must divide size {self.size}")
        if self.coarse_upsample not in ("bilinear", "nearest"):
            raise InvalidInputError(f"unknown coarse upsampling {self.coarse_upsample!r}")
        if not 0.0 <= self.cloud_probability <= 1.0:
            raise InvalidInputError("cloud_probability must lie in [0, 1]")
        if self.patch_size > self.size:
            raise InvalidInputError("patch_size exceeds scene size")


def acquisition_dates(n: int, rng: np.random.Generator, start: str = "2013-04-01") -> list[dt.date]:
    """Irregular 16-day-multiple revisit schedule."""
    day = dt.date.fromisoformat(start)
    out = [day]
    for _ in range(n - 1):
        day = day + dt.timedelta(days=16 * int(rng.integers(1, 5)))
        out.append(day)
    return out


def field_mosaic(size: int, n_fields: int, rng: np.random.Generator, grid: int = 0) -> np.ndarray:
    """Integer field label per pixel from a Voronoi partition of random seeds."""
    n_fields = max(1, n_fields)
    if n_fields == 1:
        return np.zeros((size, size), dtype=np.int64)
    seeds = rng.uniform(0, size, size=(n_fields, 2))
    if grid:
        # Label each grid cell by its centre so fields are unions of cells.
        c = (np.arange(size // grid) + 0.5) * grid
    else:
        c = np.arange(size) + 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    _, labels = cKDTree(seeds).query(np.stack([yy.ravel(), xx.ravel()], axis=1))
    labels = labels.reshape(yy.shape).astype(np.int64)
    if grid:
        labels = np.repeat(np.repeat(labels, grid, axis=0), grid, axis=1)
    return labels


def _field_curves(n_fields: int, dates: list[dt.date], amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Reflectance of every field at every date, shape (n_dates, n_fields, 4)."""
    names = list(_CLASSES)
    classes = rng.integers(0, len(names), size=n_fields)
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=np.float64)
    out = np.empty((len(dates), n_fields, 4))
    for f in range(n_fields):
        base, resp, peak, width = _CLASSES[names[classes[f]]]
        base = np.asarray(base) * rng.uniform(0.85, 1.15)
        peak = peak + rng.normal(0, 15)
        width = width * rng.uniform(0.8, 1.2)
        green = amplitude * rng.uniform(0.6, 1.0) * np.exp(-(((doy - peak) / width) ** 2))
        out[:, f] = base + green[:, None] * np.asarray(resp)
    return np.clip(out, 0.01, 0.95)


def coarsen(fine: np.ndarray, factor: int, upsample: str = "bilinear") -> np.ndarray:
    """Block-mean at ``factor`` then back to the fine grid."""
    coarse = block_mean(fine, factor)
    if upsample == "nearest":
        return replicate_upsample(coarse, factor)
    return bilinear_resample(Raster(coarse), fine.shape[1], fine.shape[2]).data


def _cloud_mask(size: int, p: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.ones((size, size), dtype=bool)
    if rng.random() < p:
        h, w = rng.integers(max(1, size // 6), max(2, size // 2), size=2)
        y, x = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        mask[y : y + h, x : x + w] = False
    return mask


def synth_scene_series(cfg: SynthConfig, scene_index: int) -> list[ScenePair]:
    """All dates of one synthetic scene; deterministic in (cfg.seed, scene_index)."""
    rng = np.random.default_rng([cfg.seed, scene_index])
    dates = acquisition_dates(cfg.dates, rng, cfg.start_date)
    n_fields = max(1, int(rng.poisson(cfg.fields * (cfg.size / 64) ** 2))) if cfg.fields > 1 else 1
    labels = field_mosaic(cfg.size, n_fields, rng, cfg.field_grid)
    curves = _field_curves(n_fields, dates, cfg.phenology_amplitude, rng)
    texture = rng.normal(0.0, cfg.texture, size=(4, cfg.size, cfg.size)) if cfg.texture > 0 else 0.0
    scene_id = f"s{scene_index:04d}"
    series = []
    for t, date in enumerate(dates):
        fine = np.clip(curves[t][labels].transpose(2, 0, 1) + texture, 0.0, 1.0)
        coarse = coarsen(fine, cfg.coarse_factor, cfg.coarse_upsample)
        mask = _cloud_mask(cfg.size, cfg.cloud_probability, rng)
        fine = np.where(mask[None], fine, CLOUD_REFLECTANCE).astype(np.float32)
        coarse = np.where(mask[None], coarse, CLOUD_REFLECTANCE).astype(np.float32)
        series.append(ScenePair(Raster(fine, mask), Raster(coarse, mask), date, scene_id))
    return series


def synth_series(cfg: SynthConfig) -> dict[str, list[ScenePair]]:
    """Patch-level time series keyed by location id."""
    by_location: dict[str, list[ScenePair]] = {}
    for s in range(cfg.scenes):
        for pair in synth_scene_series(cfg, s):
            for loc, patch in extract_patches(pair, cfg.patch_size):
                by_location.setdefault(loc, []).append(patch)
    return by_location


def synth_generate(cfg: SynthConfig, out_dir: str | Path):
    """Generate, split and write a synthetic dataset; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = synth_series(cfg)
    manifest = split_locations(list(series), cfg.split_ratios, cfg.seed)
    manifest.patch_size = manifest.stride = cfg.patch_size
    manifest.qa_threshold = cfg.qa_threshold
    manifest.meta = {
        "source": "synthetic",
        "synth_config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "records_before_qa": sum(len(v) - 1 for v in series.values()),
        "coarse_representation": "block mean upsampled to fine grid (" + cfg.coarse_upsample + ")",
    }
    records = build_triplets(series, cfg.qa_threshold)
    return write_dataset(records, manifest, out_dir / "manifest.json")
