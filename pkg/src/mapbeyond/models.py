"""The three prediction architectures and their loss contracts.

Builders return a declarative ``ModelSpec`` (layer schedule); ``instantiate``
turns a spec into a torch module with seeded initialization. Networks map a
1x256x256 occupancy image in [-1, 1] to an equally sized image in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch

INPUT_SIZE = 256

UNET_ENCODER_FILTERS = (64, 128, 256, 512, 512, 512, 512, 512)
UNET_DECODER_OUT = (512, 512, 512, 512, 256, 128, 64)
RESNET_BLOCKS = 9
DISC_FILTERS = (64, 128, 256, 512, 512, 512)
DISC_STRIDES = (2, 2, 2, 1, 1, 1)
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LayerSpec:
    kind: str                  # conv | deconv | resblock
    filters: int
    kernel: int
    stride: float              # 2, 1, or 0.5 (fractional stride = transposed)
    norm: bool = True
    activation: str = "relu"   # relu | leaky_relu | tanh | none
    dropout: float = 0.0
    concat_encoder: int | None = None  # encoder layer whose features join after this one


@dataclass(frozen=True)
class ModelSpec:
    kind: str                  # unet_ff | resnet_ff | patch_discriminator
    in_channels: int
    out_channels: int
    input_size: int
    layers: tuple[LayerSpec, ...]
    encoder_len: int = 0       # leading layers forming the U-Net encoder

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = tuple(LayerSpec(**l) for l in d["layers"])
        return cls(kind=d["kind"], in_channels=d["in_channels"],
                   out_channels=d["out_channels"], input_size=d["input_size"],
                   layers=layers, encoder_len=d["encoder_len"])


def build_unet_generator(dropout: float = 0.5) -> ModelSpec:
    """Encoder-decoder with mirrored skip concatenation (layer i into n-i).

    All encoder convolutions are 4x4 stride 2; decoder layers upsample by the
    same factor and apply dropout. The innermost encoder layer runs on a 1x1
    feature map and carries no normalization (undefined statistics at batch
    size one).
    """
    layers = []
    for k, f in enumerate(UNET_ENCODER_FILTERS):
        layers.append(LayerSpec("conv", f, 4, 2,
                                norm=k != len(UNET_ENCODER_FILTERS) - 1))
    n_enc = len(UNET_ENCODER_FILTERS)
    for k, f in enumerate(UNET_DECODER_OUT):
        layers.append(LayerSpec("deconv", f, 4, 0.5, dropout=dropout,
                                concat_encoder=n_enc - 2 - k))
    layers.append(LayerSpec("deconv", 1, 4, 0.5, norm=False, activation="tanh"))
    return ModelSpec("unet_ff", 1, 1, INPUT_SIZE, tuple(layers), encoder_len=n_enc)


def build_resnet_generator() -> ModelSpec:
    """Stride-2 downsampling stem, 9 identity-shortcut blocks, fractional-stride
    upsampling, as in the image-transformation lineage it follows."""
    layers = [
        LayerSpec("conv", 64, 7, 1),
        LayerSpec("conv", 128, 3, 2),
        LayerSpec("conv", 256, 3, 2),
    ]
    layers += [LayerSpec("resblock", 256, 3, 1)] * RESNET_BLOCKS
    layers += [
        LayerSpec("deconv", 128, 3, 0.5),
        LayerSpec("deconv", 64, 3, 0.5),
        LayerSpec("conv", 1, 7, 1, norm=False, activation="tanh"),
    ]
    return ModelSpec("resnet_ff", 1, 1, INPUT_SIZE, tuple(layers))


def build_patch_discriminator() -> ModelSpec:
    """Patch-level real/fake scorer over a concatenated (input, candidate) pair.

    Emits a spatial grid of logits, not a scalar.
    """
    layers = []
    for k, (f, s) in enumerate(zip(DISC_FILTERS, DISC_STRIDES)):
        layers.append(LayerSpec("conv", f, 4, s, norm=k != 0,
                                activation="leaky_relu"))
    layers.append(LayerSpec("conv", 1, 4, 1, norm=False, activation="none"))
    return ModelSpec("patch_discriminator", 2, 1, INPUT_SIZE, tuple(layers))


def layer_input_channels(spec: ModelSpec) -> list[int]:
    """Channel count entering each layer, skip concatenations included."""
    ins = []
    cur = spec.in_channels
    enc_out = {}
    for k, layer in enumerate(spec.layers):
        ins.append(cur)
        if k < spec.encoder_len:
            enc_out[k] = layer.filters
        cur = layer.filters
        if layer.concat_encoder is not None:
            cur += enc_out[layer.concat_encoder]
    return ins


def decoder_input_widths(spec: ModelSpec) -> tuple[int, ...]:
    """The U-Net decoder schedule expressed as per-layer input widths."""
    return tuple(layer_input_channels(spec)[spec.encoder_len:])


def _activation(name: str) -> nn.Module | None:
    if name == "relu":
        return nn.ReLU(inplace=True)
    if name == "leaky_relu":
        return nn.LeakyReLU(LEAKY_SLOPE, inplace=True)
    if name == "tanh":
        return nn.Tanh()
    if name == "none":
        return None
    raise ValueError(f"unknown activation {name!r}")


def _stage(cin: int, layer: LayerSpec) -> nn.Sequential:
    mods: list[nn.Module] = []
    k = layer.kernel
    if layer.kind == "conv":
        mods.append(nn.Conv2d(cin, layer.filters, k, int(layer.stride),
                              padding=k // 2 if k % 2 else 1))
    elif layer.kind == "deconv":
        mods.append(nn.ConvTranspose2d(cin, layer.filters, k, 2, padding=1,
                                       output_padding=0 if k % 2 == 0 else 1))
    else:
        raise ValueError(f"unknown layer kind {layer.kind!r}")
    if layer.norm:
        mods.append(nn.BatchNorm2d(layer.filters))
    act = _activation(layer.activation)
    if act is not None:
        mods.append(act)
    if layer.dropout > 0:
        mods.append(nn.Dropout(layer.dropout))
    return nn.Sequential(*mods)


class ResidualBlock(nn.Module):
    """conv-norm-relu-conv-norm branch added to an identity shortcut."""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        p = kernel // 2
        self.branch = nn.Sequential(
            nn.Conv2d(channels, channels, kernel, 1, padding=p),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, kernel, 1, padding=p),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.branch(x)


class UNetGenerator(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        ins = layer_input_channels(spec)
        self.downs = nn.ModuleList(
            _stage(ins[k], spec.layers[k]) for k in range(spec.encoder_len)
        )
        self.ups = nn.ModuleList(
            _stage(ins[k], spec.layers[k])
            for k in range(spec.encoder_len, len(spec.layers))
        )

    def forward(self, x):
        feats = []
        for down in self.downs:
            x = down(x)
            feats.append(x)
        for up, layer in zip(self.ups, self.spec.layers[self.spec.encoder_len:]):
            x = up(x)
            if layer.concat_encoder is not None:
                x = torch.cat([x, feats[layer.concat_encoder]], dim=1)
        return x


class ChainNetwork(nn.Module):
    """Plain layer chain; covers the residual generator and the discriminator."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        ins = layer_input_channels(spec)
        stages = []
        for cin, layer in zip(ins, spec.layers):
            if layer.kind == "resblock":
                stages.append(ResidualBlock(cin, layer.kernel))
            else:
                stages.append(_stage(cin, layer))
        self.net = nn.Sequential(*stages)

    def forward(self, x):
        return self.net(x)


def init_parameters(module: nn.Module, init_std: float = 0.2) -> None:
    """Convolution weights from Normal(0, init_std); norm scales near one."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, init_std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


def instantiate(spec: ModelSpec, seed: int, init_std: float = 0.2) -> nn.Module:
    """Build the torch module for a spec with seeded, reproducible weights."""
    torch.manual_seed(seed)
    if spec.kind == "unet_ff":
        module = UNetGenerator(spec)
    else:
        module = ChainNetwork(spec)
    init_parameters(module, init_std)
    return module


def loss_feedforward(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all pixels."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return (pred - target).abs().mean()


def loss_gan(pred: torch.Tensor, target: torch.Tensor,
             disc_scores_fake: torch.Tensor, lam: float) -> torch.Tensor:
    """Generator objective: fool-the-discriminator term plus lam * L1.

    ``disc_scores_fake`` are logits; the adversarial term is binary
    cross-entropy against the real label.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    adv = F.binary_cross_entropy_with_logits(
        disc_scores_fake, torch.ones_like(disc_scores_fake)
    )
    return adv + lam * loss_feedforward(pred, target)


def loss_discriminator(scores_real: torch.Tensor,
                       scores_fake: torch.Tensor) -> torch.Tensor:
    """Standard real/fake objective on logits, halved as in the cited lineage."""
    real = F.binary_cross_entropy_with_logits(
        scores_real, torch.ones_like(scores_real)
    )
    fake = F.binary_cross_entropy_with_logits(
        scores_fake, torch.zeros_like(scores_fake)
    )
    return 0.5 * (real + fake)
