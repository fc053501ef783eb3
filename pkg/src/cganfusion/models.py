"""U-Net generator and PatchGAN discriminator built from declarative layer specs.

The default specs reproduce the reference architecture for 256x256 inputs:

* generator: six encoder convolutions (8->64->128->256->512->1024->1024), six
  transposed-convolution decoder levels with encoder skips, and a 3x3 output
  layer back to 4 bands;
* discriminator: 12-channel input (candidate + conditioning), four stride-2
  convolutions and a stride-1 head giving a 15x15 map of sigmoid scores.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

GENERATOR_LADDER = (64, 128, 256, 512, 1024)
DISCRIMINATOR_LADDER = (128, 256, 512, 512)
SUPPORTED_SIZES = (64, 128, 256)


class NonFiniteActivationError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activation in layer {layer!r}")
        self.layer = layer


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv" or "deconv"
    c_in: int
    c_out: int
    kernel: int
    stride: int
    padding: int
    norm: bool = False
    act: str | None = None  # "prelu", "leaky", "sigmoid"
    dropout: float = 0.0

    def out_size(self, n: int) -> int:
        if self.kind == "conv":
            return (n + 2 * self.padding - self.kernel) // self.stride + 1
        return (n - 1) * self.stride - 2 * self.padding + self.kernel

    def n_params(self) -> int:
        n = self.kernel**2 * self.c_in * self.c_out + self.c_out
        if self.norm:
            n += 2 * self.c_out
        if self.act == "prelu":
            n += 1
        return n


@dataclass(frozen=True)
class GeneratorSpec:
    encoder: tuple[LayerSpec, ...]
    decoder: tuple[LayerSpec, ...]
    output: LayerSpec
    # decoder layer name -> encoder layer whose output is concatenated onto it
    skips: tuple[tuple[str, str], ...]
    input_size: int = 256
    ladder: tuple[int, ...] = GENERATOR_LADDER
    dropout: float = 0.4

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        return self.encoder + self.decoder + (self.output,)

    def to_dict(self) -> dict:
        return {"type": "generator", **asdict(self)}


@dataclass(frozen=True)
class DiscriminatorSpec:
    convs: tuple[LayerSpec, ...]
    input_size: int = 256
    ladder: tuple[int, ...] = DISCRIMINATOR_LADDER
    in_channels: int = 12

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        return self.convs

    def to_dict(self) -> dict:
        return {"type": "discriminator", **asdict(self)}


def spec_from_dict(d: dict) -> GeneratorSpec | DiscriminatorSpec:
    d = dict(d)
    kind = d.pop("type")
    tup = lambda xs: tuple(LayerSpec(**x) for x in xs)  # noqa: E731
    if kind == "generator":
        return GeneratorSpec(
            encoder=tup(d["encoder"]),
            decoder=tup(d["decoder"]),
            output=LayerSpec(**d["output"]),
            skips=tuple(tuple(s) for s in d["skips"]),
            input_size=d["input_size"],
            ladder=tuple(d["ladder"]),
            dropout=d["dropout"],
        )
    if kind == "discriminator":
        return DiscriminatorSpec(
            convs=tup(d["convs"]),
            input_size=d["input_size"],
            ladder=tuple(d["ladder"]),
            in_channels=d["in_channels"],
        )
    raise ValueError(f"unknown spec type {kind!r}")


def generator_spec(
    ladder: tuple[int, ...] = GENERATOR_LADDER,
    in_channels: int = 8,
    out_channels: int = 4,
    dropout: float = 0.4,
    input_size: int = 256,
) -> GeneratorSpec:
    """U-Net spec with one stride-2 level per ``ladder`` entry plus a stride-1 bottleneck."""
    n = len(ladder)
    enc = []
    c_prev = in_channels
    for i, c in enumerate(ladder):
        # First encoder conv carries no norm or activation.
        hidden = i > 0
        enc.append(LayerSpec(f"e{i + 1}", "conv", c_prev, c, 4, 2, 1, norm=hidden, act="prelu" if hidden else None))
        c_prev = c
    latent = ladder[-1]
    enc.append(LayerSpec(f"e{n + 1}", "conv", latent, latent, 4, 1, 1, norm=True, act="prelu"))

    dec = [LayerSpec("d1", "deconv", latent, latent, 4, 1, 1, norm=True, act="prelu", dropout=dropout)]
    skips = [("d1", f"e{n}")]
    for j in range(1, n):
        c_in = 2 * ladder[n - j]
        c_out = ladder[n - j - 1]
        dec.append(
            LayerSpec(
                f"d{j + 1}", "deconv", c_in, c_out, 4, 2, 1,
                norm=True, act="prelu", dropout=dropout if j == 1 else 0.0,
            )
        )
        skips.append((f"d{j + 1}", f"e{n - j}"))
    dec.append(LayerSpec(f"d{n + 1}", "deconv", 2 * ladder[0], ladder[0], 4, 2, 1))
    out = LayerSpec("out", "deconv", ladder[0], out_channels, 3, 1, 1)
    return GeneratorSpec(tuple(enc), tuple(dec), out, tuple(skips), input_size, tuple(ladder), dropout)


def discriminator_spec(
    ladder: tuple[int, ...] = DISCRIMINATOR_LADDER, in_channels: int = 12, input_size: int = 256
) -> DiscriminatorSpec:
    convs = []
    c_prev = in_channels
    for i, c in enumerate(ladder):
        convs.append(LayerSpec(f"c{i + 1}", "conv", c_prev, c, 4, 2, 1, norm=i > 0, act="leaky"))
        c_prev = c
    convs.append(LayerSpec(f"c{len(ladder) + 1}", "conv", c_prev, 1, 4, 1, 1, act="sigmoid"))
    return DiscriminatorSpec(tuple(convs), input_size, tuple(ladder), in_channels)


def scale_spec(spec, input_size: int, width: float = 1.0):
    """Adapt a 256x256 spec to a smaller input.

    Trailing stride-2 levels are dropped (one per halving of the input) so
    the bottleneck keeps the same spatial size; the stride-1 bottleneck takes
    the channel count of the deepest retained level. ``width`` multiplies
    every hidden channel count. The discriminator is fully convolutional and
    only has its width changed.
    """
    if input_size not in SUPPORTED_SIZES:
        raise ValueError(f"unsupported input size {input_size}; expected one of {SUPPORTED_SIZES}")
    scaled = lambda cs: tuple(max(1, int(round(c * width))) for c in cs)  # noqa: E731
    if isinstance(spec, DiscriminatorSpec):
        if width == 1.0 and input_size == spec.input_size:
            return spec
        return discriminator_spec(scaled(spec.ladder), spec.in_channels, input_size)
    drop = int(math.log2(256 // input_size))
    if drop == 0 and width == 1.0 and spec.input_size == input_size:
        return spec
    full = spec.ladder
    if spec.input_size != 256:
        raise ValueError("scale_spec expects a full-size (256) generator spec")
    ladder = scaled(full[: len(full) - drop])
    return generator_spec(
        ladder,
        in_channels=spec.encoder[0].c_in,
        out_channels=spec.output.c_out,
        dropout=spec.dropout,
        input_size=input_size,
    )


class _Block(nn.Module):
    def __init__(self, s: LayerSpec):
        super().__init__()
        conv_cls = nn.Conv2d if s.kind == "conv" else nn.ConvTranspose2d
        self.spec = s
        self.conv = conv_cls(s.c_in, s.c_out, s.kernel, s.stride, s.padding)
        self.norm = nn.BatchNorm2d(s.c_out, momentum=0.1) if s.norm else None
        self.act = nn.PReLU(init=0.25) if s.act == "prelu" else None

    def forward(self, x: torch.Tensor, stochastic: bool = False) -> torch.Tensor:
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        if self.spec.dropout > 0:
            x = F.dropout(x, self.spec.dropout, training=stochastic)
        if self.act is not None:
            x = self.act(x)
        elif self.spec.act == "leaky":
            x = F.leaky_relu(x, 0.2)
        elif self.spec.act == "sigmoid":
            x = torch.sigmoid(x)
        return x


def _check(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise NonFiniteActivationError(name)


class UNetGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.encoder = nn.ModuleDict({s.name: _Block(s) for s in spec.encoder})
        self.decoder = nn.ModuleDict({s.name: _Block(s) for s in spec.decoder})
        self.output = _Block(spec.output)
        self._skips = dict(spec.skips)

    def forward(
        self,
        c: torch.Tensor,
        stochastic: bool = False,
        check_finite: bool = False,
        features: dict | None = None,
    ) -> torch.Tensor:
        """Map an 8-band conditioning stack to a 4-band prediction.

        ``stochastic`` enables dropout, the generator's only noise source.
        Pass a dict as ``features`` to collect every intermediate activation.
        """
        enc_out = {}
        x = c
        for name, block in self.encoder.items():
            x = block(x)
            enc_out[name] = x
            if check_finite:
                _check(x, name)
            if features is not None:
                features[name] = x
        for name, block in self.decoder.items():
            x = block(x, stochastic)
            if check_finite:
                _check(x, name)
            if features is not None:
                features[name] = x
            if name in self._skips:
                x = torch.cat([x, enc_out[self._skips[name]]], dim=1)
        x = self.output(x)
        if check_finite:
            _check(x, "out")
        if features is not None:
            features["out"] = x
        return x


class PatchDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.layers = nn.ModuleDict({s.name: _Block(s) for s in spec.convs})

    def forward(self, candidate: torch.Tensor, c: torch.Tensor, features: dict | None = None) -> torch.Tensor:
        x = torch.cat([candidate, c], dim=1)
        for name, block in self.layers.items():
            x = block(x)
            if features is not None:
                features[name] = x
        return x


def build(spec) -> nn.Module:
    if isinstance(spec, GeneratorSpec):
        return UNetGenerator(spec)
    if isinstance(spec, DiscriminatorSpec):
        return PatchDiscriminator(spec)
    raise TypeError(f"not a model spec: {type(spec).__name__}")


def init_weights(spec, seed: int) -> nn.Module:
    """Build a model and draw its parameters deterministically from ``seed``.

    Convolution kernels ~ N(0, 0.02), biases 0; norm scale 1 and offset 0;
    PReLU slopes 0.25.
    """
    model = build(spec)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * 0.02)
                module.bias.zero_()
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.reset_running_stats()
            elif isinstance(module, nn.PReLU):
                module.weight.fill_(0.25)
    return model


def checksum(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def generator_forward(model: UNetGenerator, c: torch.Tensor, stochastic: bool = False) -> torch.Tensor:
    """Shape-checked generator evaluation with per-layer finiteness diagnostics."""
    spec = model.spec
    expected = (spec.encoder[0].c_in, spec.input_size, spec.input_size)
    if c.ndim == 3:
        return generator_forward(model, c[None], stochastic)[0]
    if tuple(c.shape[1:]) != expected:
        raise ValueError(f"conditioning input must be (N, {expected}), got {tuple(c.shape)}")
    return model(c, stochastic=stochastic, check_finite=True)


def discriminator_forward(model: PatchDiscriminator, candidate: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    if candidate.ndim == 3:
        return discriminator_forward(model, candidate[None], c[None])[0]
    n_cand = model.spec.in_channels - c.shape[1]
    if candidate.shape[1] != n_cand or candidate.shape[2:] != c.shape[2:] or candidate.shape[0] != c.shape[0]:
        raise ValueError(f"candidate {tuple(candidate.shape)} incompatible with conditioning {tuple(c.shape)}")
    return model(candidate, c)


def latent_size(spec: GeneratorSpec) -> int:
    n = spec.input_size
    for s in spec.encoder:
        n = s.out_size(n)
    return n


def desk_specs(input_size: int = 64, width: float = 1.0) -> tuple[GeneratorSpec, DiscriminatorSpec]:
    return (
        scale_spec(generator_spec(), input_size, width),
        scale_spec(discriminator_spec(), input_size, width),
    )


__all__ = [
    "LayerSpec",
    "GeneratorSpec",
    "DiscriminatorSpec",
    "UNetGenerator",
    "PatchDiscriminator",
    "generator_spec",
    "discriminator_spec",
    "scale_spec",
    "init_weights",
    "checksum",
    "parameter_count",
    "generator_forward",
    "discriminator_forward",
    "spec_from_dict",
    "desk_specs",
]
