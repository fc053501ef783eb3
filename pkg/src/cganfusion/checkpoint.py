"""Checkpoint directories: weights archive, JSON specs and a training-state sidecar.

Layout (see docs/checkpoint.md)::

    <ckpt>/spec.json    format tag, version, generator/discriminator specs, checksums
    <ckpt>/weights.pt   {"generator": state_dict, "discriminator": state_dict}
    <ckpt>/state.json   epoch, step counters, learning rate, config, validation history
    <ckpt>/optim.pt     optimizer/scheduler states and RNG state (absent for weights-only exports)
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .models import PatchDiscriminator, UNetGenerator, build, checksum, spec_from_dict

FORMAT = "cganfusion-checkpoint"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(
    path: str | Path,
    generator: UNetGenerator,
    discriminator: PatchDiscriminator | None = None,
    state: dict | None = None,
    optim: dict | None = None,
) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.mkdir(parents=True, exist_ok=True)
    spec = {
        "format": FORMAT,
        "version": VERSION,
        "generator": generator.spec.to_dict(),
        "discriminator": None if discriminator is None else discriminator.spec.to_dict(),
        "checksums": {
            "generator": checksum(generator),
            "discriminator": None if discriminator is None else checksum(discriminator),
        },
    }
    weights = {"generator": generator.state_dict()}
    if discriminator is not None:
        weights["discriminator"] = discriminator.state_dict()
    try:
        (tmp / "spec.json").write_text(json.dumps(spec, indent=1))
        torch.save(weights, tmp / "weights.pt")
        (tmp / "state.json").write_text(json.dumps(state or {}, indent=1))
        if optim is not None:
            torch.save(optim, tmp / "optim.pt")
        if path.exists():
            for f in path.iterdir():
                f.unlink()
            path.rmdir()
        tmp.rename(path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path: str | Path, device: str = "cpu") -> dict:
    """Load every part of a checkpoint; keys ``generator``, ``discriminator``, ``state``, ``optim``."""
    path = Path(path)
    if not (path / "spec.json").is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    spec = json.loads((path / "spec.json").read_text())
    if spec.get("format") != FORMAT or spec.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {spec.get('format')}/{spec.get('version')}")
    weights = torch.load(path / "weights.pt", map_location=device, weights_only=True)
    out = {"state": json.loads((path / "state.json").read_text()), "optim": None, "discriminator": None}
    for name in ("generator", "discriminator"):
        if spec[name] is None:
            continue
        model = build(spec_from_dict(spec[name]))
        model.load_state_dict(weights[name])
        if checksum(model) != spec["checksums"][name]:
            raise CheckpointError(f"{path}: {name} checksum mismatch")
        out[name] = model.to(device)
    if (path / "optim.pt").is_file():
        out["optim"] = torch.load(path / "optim.pt", map_location="cpu", weights_only=True)
    return out


def load_generator(path: str | Path, device: str = "cpu") -> UNetGenerator:
    g = load_checkpoint(path, device)["generator"]
    g.eval()
    return g
