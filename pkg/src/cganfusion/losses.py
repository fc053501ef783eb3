"""Differentiable objective terms: L1, SSIM and the adversarial log-losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .metrics import DEFAULT_CONFIG, MetricConfig, gaussian_window

EPS = 1e-7


class NumericalDomainError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1  # L1
    beta: float = 100.0  # SSIM

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")


def _pixel_mask(mask, like: torch.Tensor) -> torch.Tensor | None:
    if mask is None:
        return None
    mask = torch.as_tensor(mask, device=like.device)
    if mask.ndim == like.ndim - 1:
        mask = mask.unsqueeze(-3)
    return mask.to(like.dtype)


def loss_l1(pred: torch.Tensor, target: torch.Tensor, mask=None) -> torch.Tensor:
    """Mean absolute error over valid pixels and all bands."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = (pred - target).abs()
    m = _pixel_mask(mask, pred)
    if m is None:
        return diff.mean()
    m = m.expand_as(diff)
    total = m.sum()
    if total == 0:
        raise ValueError("empty mask")
    return (diff * m).sum() / total


def _window(cfg: MetricConfig, channels: int, like: torch.Tensor) -> torch.Tensor:
    g = torch.as_tensor(gaussian_window(cfg.ssim_window_size, cfg.ssim_window_sigma), dtype=like.dtype, device=like.device)
    return torch.outer(g, g).expand(channels, 1, -1, -1).contiguous()


def ssim_index(pred: torch.Tensor, target: torch.Tensor, cfg: MetricConfig = DEFAULT_CONFIG, mask=None) -> torch.Tensor:
    """Mean SSIM over bands and fully-valid windows, for (N, B, H, W) or (B, H, W) input.

    Uses the same Gaussian window, constants and window-validity rule as
    :func:`cganfusion.metrics.ssim`; averaging is per band then across bands.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 3:
        pred, target = pred[None], target[None]
        mask = None if mask is None else torch.as_tensor(mask)[None]
    n, b, h, w = pred.shape
    size = cfg.ssim_window_size
    if min(h, w) < size:
        raise ValueError(f"image {(h, w)} smaller than SSIM window {size}")
    m = _pixel_mask(mask, pred)
    if m is not None:
        pred = pred * m
        target = target * m
    win = _window(cfg, b, pred)
    filt = lambda x: F.conv2d(x, win, groups=b)  # noqa: E731
    mu_x, mu_y = filt(pred), filt(target)
    var_x = filt(pred * pred) - mu_x**2
    var_y = filt(target * target) - mu_y**2
    cov = filt(pred * target) - mu_x * mu_y
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    smap = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    if m is None:
        return smap.mean()
    box = torch.ones(1, 1, size, size, dtype=pred.dtype, device=pred.device)
    ok = (F.conv2d(1.0 - m, box) < 0.5).to(pred.dtype).expand_as(smap)
    if ok.sum() == 0:
        raise ValueError("no fully valid SSIM window")
    return (smap * ok).sum() / ok.sum()


def loss_ssim(pred: torch.Tensor, target: torch.Tensor, cfg: MetricConfig = DEFAULT_CONFIG, mask=None) -> torch.Tensor:
    return 1.0 - ssim_index(pred, target, cfg, mask)


def _check_domain(x: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(x).all() or (x < 0).any() or (x > 1).any():
        raise NumericalDomainError(f"{name} discriminator scores must lie in (0, 1)")
    return x.clamp(EPS, 1.0 - EPS)


def generator_adversarial(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term ``-mean(log D(G(c)|c))``."""
    return -torch.log(_check_domain(d_fake, "fake")).mean()


def discriminator_adversarial(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    real = _check_domain(d_real, "real")
    fake = _check_domain(d_fake, "fake")
    return -torch.log(real).mean() - torch.log(1.0 - fake).mean()


def loss_adversarial(d_real: torch.Tensor, d_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(g_loss, d_loss)``, each averaged over cells and batch."""
    return generator_adversarial(d_fake), discriminator_adversarial(d_real, d_fake)
