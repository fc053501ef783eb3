"""Full-reference quality metrics: PSNR, SSIM and spectral angle (SAM).

All metrics ignore pixels that are invalid in either input. SSIM windows
are only scored when they lie fully inside the image and every pixel under
them is valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .raster import InvalidInputError, Raster, check_same_grid, joint_mask


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    psnr_max_value: float = 1.0
    psnr_cap: float = 100.0
    ssim_window_size: int = 11
    ssim_window_sigma: float = 1.5
    ssim_c1: float = (0.01 * 1.0) ** 2
    ssim_c2: float = (0.03 * 1.0) ** 2
    sam_zero_norm_policy: str = "skip"

    def __post_init__(self):
        if self.ssim_window_size < 3 or self.ssim_window_size % 2 == 0:
            raise InvalidInputError("ssim_window_size must be odd and >= 3")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise InvalidInputError("ssim constants must be positive")
        if not math.isfinite(self.psnr_cap):
            raise InvalidInputError("psnr_cap must be finite")
        if self.sam_zero_norm_policy not in ("skip", "error"):
            raise InvalidInputError(f"unknown sam_zero_norm_policy {self.sam_zero_norm_policy!r}")


DEFAULT_CONFIG = MetricConfig()


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is its outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _check_band(r: Raster, band: int) -> None:
    if not 0 <= band < r.n_bands:
        raise InvalidInputError(f"band {band} out of range for {r.n_bands}-band raster")


def psnr(pred: Raster, target: Raster, band: int, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    mask = joint_mask(pred, target)
    _check_band(pred, band)
    if not mask.any():
        raise UndefinedMetricError("no jointly valid pixels")
    diff = pred.data[band][mask].astype(np.float64) - target.data[band][mask]
    rmse = math.sqrt(np.mean(diff**2))
    if rmse == 0.0:
        return cfg.psnr_cap
    return min(20.0 * math.log10(cfg.psnr_max_value / rmse), cfg.psnr_cap)


def _valid_filter(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # Separable correlation cropped to windows lying fully inside the image.
    r = len(taps) // 2
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[r : img.shape[0] - r, r : img.shape[1] - r]


def window_validity(mask: np.ndarray, size: int) -> np.ndarray:
    """True for each fully-inside window whose pixels are all valid."""
    invalid = (~mask).astype(np.float64)
    box = np.ones(size)
    r = size // 2
    count = correlate1d(correlate1d(invalid, box, axis=0, mode="constant"), box, axis=1, mode="constant")
    return count[r : mask.shape[0] - r, r : mask.shape[1] - r] < 0.5


def ssim_map(x: np.ndarray, y: np.ndarray, cfg: MetricConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Local SSIM index for every fully-inside window of two 2-D images."""
    size = cfg.ssim_window_size
    if x.shape != y.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < size:
        raise InvalidInputError(f"image {x.shape} smaller than SSIM window {size}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    taps = gaussian_window(size, cfg.ssim_window_sigma)
    mu_x = _valid_filter(x, taps)
    mu_y = _valid_filter(y, taps)
    var_x = _valid_filter(x * x, taps) - mu_x**2
    var_y = _valid_filter(y * y, taps) - mu_y**2
    cov = _valid_filter(x * y, taps) - mu_x * mu_y
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return num / den


def ssim(pred: Raster, target: Raster, band: int, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    mask = joint_mask(pred, target)
    _check_band(pred, band)
    x = np.where(mask, pred.data[band], 0.0)
    y = np.where(mask, target.data[band], 0.0)
    smap = ssim_map(x, y, cfg)
    ok = window_validity(mask, cfg.ssim_window_size)
    if not ok.any():
        raise UndefinedMetricError("no fully valid SSIM window")
    return float(smap[ok].mean())


def sam(pred: Raster, target: Raster, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Mean spectral angle in radians over valid pixels."""
    mask = joint_mask(pred, target)
    p = pred.data[:, mask].astype(np.float64)
    t = target.data[:, mask].astype(np.float64)
    norm_p = np.linalg.norm(p, axis=0)
    norm_t = np.linalg.norm(t, axis=0)
    nonzero = (norm_p > 0) & (norm_t > 0)
    if not nonzero.any():
        raise UndefinedMetricError("every pixel has a zero-norm spectrum")
    if cfg.sam_zero_norm_policy == "error" and not nonzero.all():
        raise UndefinedMetricError("zero-norm spectra present")
    # 2*atan2(|u-v|, |u+v|) on unit vectors; arccos loses ~1e-8 near zero angle.
    u = p[:, nonzero] / norm_p[nonzero]
    v = t[:, nonzero] / norm_t[nonzero]
    angles = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    return float(np.mean(angles))


def band_scores(pred: Raster, target: Raster, cfg: MetricConfig = DEFAULT_CONFIG) -> dict:
    """Per-band PSNR/SSIM plus scene SAM for one prediction."""
    check_same_grid(pred, target)
    return {
        "psnr": [psnr(pred, target, b, cfg) for b in range(pred.n_bands)],
        "ssim": [ssim(pred, target, b, cfg) for b in range(pred.n_bands)],
        "sam": sam(pred, target, cfg),
    }
