"""Adversarial training of the fusion generator.

Each generator update is preceded by ``d_steps`` discriminator updates,
each on a freshly sampled generator output for the same batch. The
generator minimises ``g_adv + alpha * L1 + beta * (1 - SSIM)`` with the
non-saturating adversarial term.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data.dataset import Dataset, stack_batch
from .data.pipeline import DataError
from .evaluate import predict_cgan, score_records
from .losses import LossWeights, discriminator_adversarial, generator_adversarial, loss_l1, loss_ssim
from .metrics import DEFAULT_CONFIG, MetricConfig
from .models import PatchDiscriminator, UNetGenerator, discriminator_spec, generator_spec, init_weights, scale_spec

log = logging.getLogger(__name__)

DEVICE_ENV = "CGANFUSION_DEVICE"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    lr: float = 3e-4
    lr_decay: float = 0.99
    batch_size: int = 64
    d_steps: int = 2
    epochs: int = 200
    seed: int = 0
    alpha: float = 0.1
    beta: float = 100.0
    ssim_loss: bool = True
    adam_betas: tuple[float, float] = (0.5, 0.999)
    width: float = 1.0  # channel multiplier for scaled-down models
    device: str | None = None
    checkpoint_every: int = 0  # also keep epoch_XXX checkpoints every n epochs; 0 = best/last only
    eval_batch_size: int = 16
    cache: bool = True  # keep decoded training records in memory

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.d_steps < 1:
            raise ValueError("d_steps must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        self.adam_betas = tuple(self.adam_betas)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta if self.ssim_loss else 0.0)

    def resolved_device(self) -> str:
        return self.device or os.environ.get(DEVICE_ENV, "cpu")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small synthetic-scale defaults: batch 8, 30 epochs, half-width model."""
        base = dict(batch_size=8, epochs=30, width=0.5)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    generator: UNetGenerator
    discriminator: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    sched_g: torch.optim.lr_scheduler.LRScheduler
    sched_d: torch.optim.lr_scheduler.LRScheduler
    config: TrainConfig
    metric_cfg: MetricConfig = DEFAULT_CONFIG
    epoch: int = 0  # completed epochs
    step: int = 0  # generator updates
    d_step: int = 0  # discriminator updates
    history: list = field(default_factory=list)
    best: float = -math.inf

    @property
    def lr(self) -> float:
        return self.opt_g.param_groups[0]["lr"]

    def sidecar(self) -> dict:
        return {
            "epoch": self.epoch,
            "step": self.step,
            "d_step": self.d_step,
            "lr": self.lr,
            "best_val_psnr": None if self.best == -math.inf else self.best,
            "config": asdict(self.config),
            "history": self.history,
        }

    def optim_state(self) -> dict:
        return {
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "sched_g": self.sched_g.state_dict(),
            "sched_d": self.sched_d.state_dict(),
            "torch_rng": torch.get_rng_state(),
        }


def _optimizers(g, d, cfg: TrainConfig):
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, gamma=cfg.lr_decay)
    sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, gamma=cfg.lr_decay)
    return opt_g, opt_d, sched_g, sched_d


def init_state(
    config: TrainConfig,
    input_size: int = 256,
    metric_cfg: MetricConfig = DEFAULT_CONFIG,
    dtype: torch.dtype = torch.float32,
) -> TrainState:
    """Fresh models and optimizers, seeded from ``config.seed``."""
    torch.manual_seed(config.seed)
    g = init_weights(scale_spec(generator_spec(), input_size, config.width), config.seed)
    d = init_weights(scale_spec(discriminator_spec(), input_size, config.width), config.seed + 1)
    device = config.resolved_device()
    g, d = g.to(device=device, dtype=dtype), d.to(device=device, dtype=dtype)
    return TrainState(g, d, *_optimizers(g, d, config), config=config, metric_cfg=metric_cfg)


def _as_tensors(batch, state: TrainState):
    cond, target, mask = batch
    dtype = next(state.generator.parameters()).dtype
    device = next(state.generator.parameters()).device
    to = lambda a: torch.as_tensor(a).to(device=device, dtype=dtype)  # noqa: E731
    return to(cond), to(target), torch.as_tensor(mask).to(device=device)


def generator_losses(state: TrainState, fake, target, mask, d_fake) -> dict:
    """Every generator term as a tensor, plus the weighted total."""
    w = state.config.weights
    terms = {"g_adv": generator_adversarial(d_fake), "l1": loss_l1(fake, target, mask)}
    total = terms["g_adv"] + w.alpha * terms["l1"]
    if state.config.ssim_loss:
        terms["ssim_loss"] = loss_ssim(fake, target, state.metric_cfg, mask if not bool(mask.all()) else None)
        total = total + w.beta * terms["ssim_loss"]
    terms["total"] = total
    return terms


def train_step(state: TrainState, batch) -> dict:
    """``d_steps`` discriminator updates then one generator update; returns the step's scalars."""
    cfg = state.config
    g, d = state.generator, state.discriminator
    cond, target, mask = _as_tensors(batch, state)
    g.train()
    d.train()

    d_losses = []
    d.requires_grad_(True)
    for _ in range(cfg.d_steps):
        with torch.no_grad():
            fake = g(cond, stochastic=True)
        d_loss = discriminator_adversarial(d(target, cond), d(fake, cond))
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_d.step()
        state.d_step += 1
        d_losses.append(d_loss.item())

    d.requires_grad_(False)
    fake = g(cond, stochastic=True)
    terms = generator_losses(state, fake, target, mask, d(fake, cond))
    state.opt_g.zero_grad(set_to_none=True)
    terms["total"].backward()
    state.opt_g.step()
    d.requires_grad_(True)
    state.step += 1

    w = cfg.weights
    rec = {
        "step": state.step,
        "d_step": state.d_step,
        "epoch": state.epoch,
        "lr": state.lr,
        "d_loss": d_losses[-1],
        "d_loss_mean": float(np.mean(d_losses)),
        "g_adv": terms["g_adv"].item(),
        "l1": terms["l1"].item(),
        "ssim_loss": terms["ssim_loss"].item() if "ssim_loss" in terms else None,
        "alpha": w.alpha,
        "beta": w.beta if cfg.ssim_loss else None,
        "terms": ["g_adv", "l1"] + (["ssim"] if cfg.ssim_loss else []),
        "total_graph": terms["total"].item(),
    }
    rec["total"] = rec["g_adv"] + w.alpha * rec["l1"] + (w.beta * rec["ssim_loss"] if cfg.ssim_loss else 0.0)
    scalars = [rec["d_loss"], rec["g_adv"], rec["l1"], rec["total"]] + ([rec["ssim_loss"]] if cfg.ssim_loss else [])
    if not all(math.isfinite(v) for v in scalars):
        raise TrainingDivergedError(f"non-finite loss at generator step {state.step}", rec)
    return rec


def validate(state: TrainState, records) -> dict:
    """Validation L1 and quality metrics of the deterministic generator."""
    device = next(state.generator.parameters()).device
    preds = predict_cgan(state.generator, records, stochastic=False, batch_size=state.config.eval_batch_size, device=device)
    l1 = float(np.mean([np.abs(p.data - r.l_target.data)[:, r.mask].mean() for p, r in zip(preds, records)]))
    scores = score_records(preds, [r.l_target for r in records], state.metric_cfg)
    return {"val_l1": l1, "val_psnr": scores["psnr"], "val_ssim": scores["ssim"], "val_sam": scores["sam"]}


class _Logs:
    def __init__(self, out_dir: Path, append: bool):
        mode = "a" if append else "w"
        self.steps = open(out_dir / "train_log.ndjson", mode)
        self.csv_path = out_dir / "epochs.csv"
        new_csv = not (append and self.csv_path.exists())
        self.epochs = open(self.csv_path, mode, newline="")
        self.writer = csv.writer(self.epochs)
        if new_csv:
            self.writer.writerow(["epoch", "step", "lr", "val_l1", "val_psnr_mean", "val_ssim_mean", "val_sam", "wall_s"])

    def step(self, rec: dict):
        self.steps.write(json.dumps({"kind": "step", **rec}) + "\n")

    def epoch(self, rec: dict):
        self.steps.write(json.dumps({"kind": "epoch", **rec}) + "\n")
        self.steps.flush()
        self.writer.writerow(
            [rec["epoch"], rec["step"], rec["lr"], rec["val_l1"], np.mean(rec["val_psnr"]),
             np.mean(rec["val_ssim"]), rec["val_sam"], rec["wall_s"]]
        )
        self.epochs.flush()

    def close(self):
        self.steps.close()
        self.epochs.close()


def _restore(state: TrainState, ckpt: dict) -> None:
    state.generator.load_state_dict(ckpt["generator"].state_dict())
    state.discriminator.load_state_dict(ckpt["discriminator"].state_dict())
    optim = ckpt["optim"]
    if optim is None:
        raise CheckpointError("checkpoint has no optimizer state; cannot resume")
    state.opt_g.load_state_dict(optim["opt_g"])
    state.opt_d.load_state_dict(optim["opt_d"])
    state.sched_g.load_state_dict(optim["sched_g"])
    state.sched_d.load_state_dict(optim["sched_d"])
    torch.set_rng_state(optim["torch_rng"])
    side = ckpt["state"]
    state.epoch, state.step, state.d_step = side["epoch"], side["step"], side["d_step"]
    state.history = side["history"]
    state.best = -math.inf if side["best_val_psnr"] is None else side["best_val_psnr"]


def train(
    config: TrainConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    resume: str | Path | None = None,
    metric_cfg: MetricConfig = DEFAULT_CONFIG,
) -> TrainState:
    """Run (or resume) training; checkpoints and logs go under ``out_dir``.

    Writes ``checkpoints/init`` before the first update, ``checkpoints/last``
    after every epoch, ``checkpoints/best`` whenever mean validation PSNR
    improves, plus ``train_log.ndjson`` and ``epochs.csv``. The validation
    metrics of the initial weights are logged as epoch 0.
    """
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ds = Dataset(manifest_path)
    train_entries, val_entries = ds.entries("train"), ds.entries("val")
    if not train_entries:
        raise DataError("training split is empty")
    input_size = train_entries[0].shape[1]
    state = init_state(config, input_size, metric_cfg)
    val_records = [ds.load(e) for e in val_entries]
    cache = {}

    def load(e):
        if not config.cache:
            return ds.load(e)
        if e.file not in cache:
            cache[e.file] = ds.load(e)
        return cache[e.file]

    if resume is not None:
        _restore(state, load_checkpoint(resume, config.resolved_device()))
        log.info("resumed from %s at epoch %d step %d", resume, state.epoch, state.step)
    logs = _Logs(out_dir, append=resume is not None)
    t0 = time.time()

    def end_epoch():
        rec = {"epoch": state.epoch, "step": state.step, "lr": state.lr, "wall_s": time.time() - t0}
        if val_records:
            rec.update(validate(state, val_records))
        else:
            rec.update(val_l1=math.nan, val_psnr=[math.nan] * 4, val_ssim=[math.nan] * 4, val_sam=math.nan)
        state.history.append(rec)
        logs.epoch(rec)
        log.info(
            "epoch %d step %d lr %.3g val_l1 %.4f val_psnr %s",
            state.epoch, state.step, state.lr, rec["val_l1"], np.round(rec["val_psnr"], 2).tolist(),
        )
        return rec

    try:
        if resume is None:
            end_epoch()
            save_checkpoint(ckpt_dir / "init", state.generator, state.discriminator, state.sidecar(), state.optim_state())
        while state.epoch < config.epochs:
            order = ds.order("train", shuffle_seed=config.seed, epoch=state.epoch)
            for i in range(0, len(order), config.batch_size):
                batch = stack_batch([load(e) for e in order[i : i + config.batch_size]])
                try:
                    logs.step(train_step(state, batch))
                except TrainingDivergedError as e:
                    save_checkpoint(ckpt_dir / "diverged", state.generator, state.discriminator, {**state.sidecar(), "snapshot": e.snapshot})
                    raise
            state.sched_g.step()
            state.sched_d.step()
            state.epoch += 1
            rec = end_epoch()
            score = float(np.mean(rec["val_psnr"]))
            is_best = math.isfinite(score) and score > state.best
            if is_best:
                state.best = score
            side, opt = state.sidecar(), state.optim_state()
            save_checkpoint(ckpt_dir / "last", state.generator, state.discriminator, side, opt)
            if is_best:
                save_checkpoint(ckpt_dir / "best", state.generator, state.discriminator, side, opt)
            if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
                save_checkpoint(ckpt_dir / f"epoch_{state.epoch:03d}", state.generator, state.discriminator, side, opt)
    finally:
        logs.close()
    return state
