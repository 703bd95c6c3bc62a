"""Training loops, the portable checkpoint container, and prediction decoding."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
import torch

from .dataset import (BASE_SIDE, DatasetManifest, INPUT_CELLS, RESOLUTION,
                      SampleRecord)
from .errors import (ExpansionMismatch, MissingExpansion, NonFiniteLoss,
                     ShapeMismatch)
from .grid import OccGrid, pixels_to_cells, read_pgm, resize_nearest, round_half_away
from .models import (ModelSpec, instantiate, loss_discriminator,
                     loss_feedforward, loss_gan)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings; defaults are the desk-scale run."""

    epochs: int = 20
    batch_size: int = 1
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    dropout: float = 0.5
    init_std: float = 0.2
    lambda_l1: float = 100.0
    expansion: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("training uses a batch size of 1")


@dataclass(frozen=True)
class Checkpoint:
    spec: ModelSpec
    config: TrainConfig
    epoch: int
    loss_history: tuple[float, ...]
    state: dict[str, np.ndarray]

    @property
    def expansion(self) -> float:
        return self.config.expansion


def save_checkpoint(ckpt: Checkpoint, path: Path) -> None:
    """Format-versioned npz container: schedule + config as JSON metadata,
    parameters as named arrays with their shapes."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "spec": ckpt.spec.to_dict(),
        "config": asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "loss_history": list(ckpt.loss_history),
        "state_keys": list(ckpt.state.keys()),
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"),
                                        dtype=np.uint8)}
    for k, v in ckpt.state.items():
        arrays["state//" + k] = v
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: Path) -> Checkpoint:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')}")
        state = {k: z["state//" + k] for k in meta["state_keys"]}
    return Checkpoint(
        spec=ModelSpec.from_dict(meta["spec"]),
        config=TrainConfig(**meta["config"]),
        epoch=meta["epoch"],
        loss_history=tuple(meta["loss_history"]),
        state=state,
    )


def module_state(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy()
            for k, v in module.state_dict().items()}


def load_module(ckpt: Checkpoint) -> torch.nn.Module:
    module = instantiate(ckpt.spec, ckpt.config.seed, ckpt.config.init_std)
    module.load_state_dict(
        {k: torch.from_numpy(v) for k, v in ckpt.state.items()}
    )
    return module


# --- grid <-> tensor codec ---------------------------------------------------

_CELL_TO_PIXEL_F = np.array([255.0, 0.0, 127.0], dtype=np.float32)


def grid_to_tensor(grid: OccGrid, size: int) -> torch.Tensor:
    """Nearest-resize to the network size and map pixels affinely to [-1, 1]."""
    resized = grid if grid.width == size and grid.height == size \
        else resize_nearest(grid, size)
    px = _CELL_TO_PIXEL_F[resized.cells]
    return torch.from_numpy(px / 127.5 - 1.0).reshape(1, 1, size, size)


def tensor_to_grid(t: torch.Tensor, resolution: float,
                   origin: tuple[float, float]) -> OccGrid:
    """Ternarize a [-1, 1] network output through the banded pixel decode."""
    arr = t.detach().reshape(t.shape[-2], t.shape[-1]).numpy()
    px = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    size = px.shape[1]
    return OccGrid(size, px.shape[0], resolution, origin, pixels_to_cells(px))


def _load_pair(manifest: DatasetManifest, rec: SampleRecord,
               expansion: float) -> tuple[OccGrid, OccGrid]:
    return (read_pgm(manifest.input_path(rec)),
            read_pgm(manifest.target_path(rec, expansion)))


def _train_records(manifest: DatasetManifest, cfg: TrainConfig):
    e = round(cfg.expansion, 2)
    if e not in manifest.expansions:
        raise MissingExpansion(
            f"dataset has no targets at {e} (available: {manifest.expansions})"
        )
    records = manifest.split_records("train")
    if not records:
        raise MissingExpansion("train split is empty")
    return records, e


class _TensorCache:
    """Keeps encoded uint8 images in memory; tensors are built per step."""

    def __init__(self, manifest, records, expansion, size):
        self.size = size
        self.pairs = []
        for rec in records:
            inp, tgt = _load_pair(manifest, rec, expansion)
            self.pairs.append((
                resize_nearest(inp, size).cells,
                resize_nearest(tgt, size).cells,
            ))

    def tensors(self, k: int) -> tuple[torch.Tensor, torch.Tensor]:
        ic, tc = self.pairs[k]
        x = torch.from_numpy(_CELL_TO_PIXEL_F[ic] / 127.5 - 1.0)
        y = torch.from_numpy(_CELL_TO_PIXEL_F[tc] / 127.5 - 1.0)
        n = self.size
        return x.reshape(1, 1, n, n), y.reshape(1, 1, n, n)


def _check_finite(value: float, what: str, epoch: int, k: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteLoss(
            f"{what} loss became {value} at epoch {epoch}, sample {k}"
        )


def train_feedforward(spec: ModelSpec, manifest: DatasetManifest,
                      cfg: TrainConfig,
                      progress: bool = True) -> Checkpoint:
    """Per-sample L1 training in seeded shuffled order with Adam."""
    records, expansion = _train_records(manifest, cfg)
    cache = _TensorCache(manifest, records, expansion, spec.input_size)
    module = instantiate(spec, cfg.seed, cfg.init_std)
    module.train()
    opt = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate,
                           betas=(cfg.beta1, cfg.beta2))
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        order = rng.permutation(len(records))
        for k in order:
            x, y = cache.tensors(int(k))
            opt.zero_grad(set_to_none=True)
            loss = loss_feedforward(module(x), y)
            value = float(loss)
            _check_finite(value, "feedforward", epoch, int(k))
            loss.backward()
            opt.step()
            total += value
        history.append(total / len(records))
        if progress:
            log.info("epoch %d/%d  L1 %.4f", epoch + 1, cfg.epochs, history[-1])
    return Checkpoint(spec, cfg, cfg.epochs, tuple(history),
                      module_state(module))


def train_gan(gen_spec: ModelSpec, disc_spec: ModelSpec,
              manifest: DatasetManifest, cfg: TrainConfig,
              progress: bool = True) -> tuple[Checkpoint, Checkpoint]:
    """Alternating per-sample updates: discriminator on the (real, fake)
    pairs, then generator on adversarial + lambda * L1."""
    records, expansion = _train_records(manifest, cfg)
    cache = _TensorCache(manifest, records, expansion, gen_spec.input_size)
    gen = instantiate(gen_spec, cfg.seed, cfg.init_std)
    disc = instantiate(disc_spec, cfg.seed + 1, cfg.init_std)
    gen.train()
    disc.train()
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate,
                             betas=(cfg.beta1, cfg.beta2))
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate,
                             betas=(cfg.beta1, cfg.beta2))
    rng = np.random.default_rng(cfg.seed)
    g_history, d_history = [], []
    for epoch in range(cfg.epochs):
        g_total = d_total = 0.0
        order = rng.permutation(len(records))
        for k in order:
            x, y = cache.tensors(int(k))
            fake = gen(x)

            d_opt.zero_grad(set_to_none=True)
            d_loss = loss_discriminator(
                disc(torch.cat([x, y], dim=1)),
                disc(torch.cat([x, fake.detach()], dim=1)),
            )
            d_value = float(d_loss)
            _check_finite(d_value, "discriminator", epoch, int(k))
            d_loss.backward()
            d_opt.step()

            g_opt.zero_grad(set_to_none=True)
            scores = disc(torch.cat([x, fake], dim=1))
            g_loss = loss_gan(fake, y, scores, cfg.lambda_l1)
            g_value = float(g_loss)
            _check_finite(g_value, "generator", epoch, int(k))
            g_loss.backward()
            g_opt.step()

            g_total += g_value
            d_total += d_value
        g_history.append(g_total / len(records))
        d_history.append(d_total / len(records))
        if progress:
            log.info("epoch %d/%d  G %.4f  D %.4f", epoch + 1, cfg.epochs,
                     g_history[-1], d_history[-1])
    return (
        Checkpoint(gen_spec, cfg, cfg.epochs, tuple(g_history),
                   module_state(gen)),
        Checkpoint(disc_spec, cfg, cfg.epochs, tuple(d_history),
                   module_state(disc)),
    )


def predict(ckpt: Checkpoint, input_crop: OccGrid, expansion: float) -> OccGrid:
    """Run the network on a 100x100 input crop and decode the expanded window.

    The output covers base_side * expansion meters around the same center at
    the dataset resolution.
    """
    e = round(float(expansion), 2)
    if e != round(ckpt.expansion, 2):
        raise ExpansionMismatch(
            f"checkpoint was trained for {ckpt.expansion}, requested {e}"
        )
    if (input_crop.width, input_crop.height) != (INPUT_CELLS, INPUT_CELLS):
        raise ShapeMismatch(
            f"input crop must be {INPUT_CELLS}x{INPUT_CELLS}, got "
            f"{input_crop.width}x{input_crop.height}"
        )
    module = load_module(ckpt)
    module.eval()
    with torch.no_grad():
        out = module(grid_to_tensor(input_crop, ckpt.spec.input_size))
    side = BASE_SIDE * e
    cx = input_crop.origin[0] + INPUT_CELLS * input_crop.resolution / 2.0
    cy = input_crop.origin[1] + INPUT_CELLS * input_crop.resolution / 2.0
    n = round_half_away(side / RESOLUTION)
    full = tensor_to_grid(out, side / ckpt.spec.input_size,
                          (cx - side / 2.0, cy - side / 2.0))
    resized = resize_nearest(full, n)
    return OccGrid(n, n, RESOLUTION, resized.origin, resized.cells)
