"""Prediction by method, per-method quality reports and scatter exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .baselines import FusionInput, baseline_bilinear, fuse_homogeneous
from .data.pipeline import DataError, PatchRecord
from .metrics import DEFAULT_CONFIG, MetricConfig, band_scores
from .models import UNetGenerator
from .raster import BAND_ORDER, Raster

METHODS = ("bilinear", "starfm-homogeneous", "cgan")


def predict_cgan(
    generator: UNetGenerator,
    records: Sequence[PatchRecord],
    stochastic: bool = False,
    batch_size: int = 16,
    device: str = "cpu",
) -> list[Raster]:
    """Raw (unclipped) generator predictions; BN runs on running statistics."""
    generator.eval()
    dtype = next(generator.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(records), batch_size):
            chunk = records[i : i + batch_size]
            cond = torch.from_numpy(np.stack([r.conditioning() for r in chunk])).to(device=device, dtype=dtype)
            pred = generator(cond, stochastic=stochastic, check_finite=True).cpu().numpy()
            for r, p in zip(chunk, pred):
                out.append(Raster(p.astype(np.float32), r.mask, r.l_target.bands))
    return out


def predict_records(
    records: Sequence[PatchRecord],
    method: str,
    generator: UNetGenerator | None = None,
    stochastic: bool = False,
    device: str = "cpu",
) -> list[Raster]:
    if method == "bilinear":
        # The dataset's coarsest representation is the coarse patch already on the fine grid.
        return [baseline_bilinear(r.m_curr, (r.l_target.height, r.l_target.width)) for r in records]
    if method == "starfm-homogeneous":
        missing = [r.location_id for r in records if r.m_prev is None]
        if missing:
            raise DataError(f"record of {missing[0]} lacks the previous coarse patch needed for fusion")
        return [fuse_homogeneous(FusionInput(r.l_prev, r.m_prev, r.m_curr)) for r in records]
    if method == "cgan":
        if generator is None:
            raise ValueError("method 'cgan' requires a generator checkpoint")
        return predict_cgan(generator, records, stochastic, device=device)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def score_records(
    preds: Iterable[Raster], targets: Iterable[Raster], cfg: MetricConfig = DEFAULT_CONFIG
) -> dict:
    """Per-record metrics on clipped predictions, averaged with equal weight per record."""
    psnr, ssim, sam = [], [], []
    for p, t in zip(preds, targets, strict=True):
        s = band_scores(p.clipped(), t, cfg)
        psnr.append(s["psnr"])
        ssim.append(s["ssim"])
        sam.append(s["sam"])
    if not psnr:
        raise DataError("no records to evaluate")
    return {
        "psnr": np.mean(psnr, axis=0).tolist(),
        "ssim": np.mean(ssim, axis=0).tolist(),
        "sam": float(np.mean(sam)),
        "count": len(psnr),
    }


@dataclass
class EvalReport:
    bands: tuple[str, ...] = BAND_ORDER
    rows: dict[str, dict] = field(default_factory=dict)  # method -> {"psnr", "ssim", "sam", "count", ...}
    meta: dict = field(default_factory=dict)

    def add(self, method: str, scores: dict) -> None:
        self.rows[method] = scores

    def validate(self) -> None:
        for method, row in self.rows.items():
            if len(row["psnr"]) != len(self.bands) or len(row["ssim"]) != len(self.bands):
                raise ValueError(f"incomplete band cells for {method}")
            if not row["sam"] >= 0 or row["count"] <= 0:
                raise ValueError(f"invalid SAM or count for {method}")

    def to_dict(self) -> dict:
        self.validate()
        return {
            "bands": list(self.bands),
            "units": {"psnr": "dB", "ssim": "index", "sam": "radians", "sam_table_scale": 100},
            "methods": {
                m: {
                    "psnr": dict(zip(self.bands, r["psnr"])),
                    "ssim": dict(zip(self.bands, r["ssim"])),
                    "sam": r["sam"],
                    "sam_e2": 100 * r["sam"],
                    "count": r["count"],
                    **{k: v for k, v in r.items() if k not in ("psnr", "ssim", "sam", "count")},
                }
                for m, r in self.rows.items()
            },
            "meta": self.meta,
        }

    def format_table(self) -> str:
        self.validate()
        nb = len(self.bands)
        width = max([len("Method")] + [len(m) for m in self.rows]) + 2
        head = "Method".ljust(width) + "PSNR".center(8 * nb) + " " + "SSIM".center(8 * nb) + " " + "SAM (10^-2)"
        sub = "Band".ljust(width) + "".join(b.center(8) for b in self.bands) + " "
        sub += "".join(b.center(8) for b in self.bands)
        lines = [head, sub, "-" * len(head)]
        for m, r in self.rows.items():
            line = m.ljust(width) + "".join(f"{v:.1f}".center(8) for v in r["psnr"]) + " "
            line += "".join(f"{v:.3f}".center(8) for v in r["ssim"]) + " "
            line += f"{100 * r['sam']:.2f}".center(11)
            lines.append(line)
        return "\n".join(lines)

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath, tpath = out_dir / "report.json", out_dir / "report.txt"
        jpath.write_text(json.dumps(self.to_dict(), indent=1))
        tpath.write_text(self.format_table() + "\n")
        return jpath, tpath


def average_scores(runs: Sequence[dict]) -> dict:
    """Average metric dicts from independently trained models (equal weight per model)."""
    if not runs:
        raise ValueError("nothing to average")
    return {
        "psnr": np.mean([r["psnr"] for r in runs], axis=0).tolist(),
        "ssim": np.mean([r["ssim"] for r in runs], axis=0).tolist(),
        "sam": float(np.mean([r["sam"] for r in runs])),
        "count": runs[0]["count"],
        "models": len(runs),
    }


def scatter_pairs(
    preds: Sequence[Raster], targets: Sequence[Raster], rate: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli-subsampled (predicted, truth) pixel values, shape (B, K) each.

    The same pixels are kept for every band; predictions are clipped to [0, 1].
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    ps, ts = [], []
    for p, t in zip(preds, targets, strict=True):
        mask = p.mask & t.mask
        keep = mask & (rng.random(mask.shape) < rate)
        ps.append(np.clip(p.data[:, keep], 0.0, 1.0))
        ts.append(np.clip(t.data[:, keep], 0.0, 1.0))
    return np.concatenate(ps, axis=1), np.concatenate(ts, axis=1)


def write_scatter(out_dir: str | Path, pred: np.ndarray, truth: np.ndarray, meta: dict, bands=BAND_ORDER) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "scatter.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["band", "predicted", "truth"])
        for b, name in enumerate(bands):
            for pv, tv in zip(pred[b], truth[b]):
                w.writerow([name, f"{pv:.7g}", f"{tv:.7g}"])
    info = {**meta, "bands": list(bands), "counts": {b: int(pred.shape[1]) for b in bands}}
    (out_dir / "scatter.json").write_text(json.dumps(info, indent=1))
    return out_dir / "scatter.csv"

