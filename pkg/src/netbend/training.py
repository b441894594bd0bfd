"""Training loop for bending modules, plus checkpoint persistence.

Only the bending module's parameters are optimized; the generator and the
embedder stay frozen. Latents are drawn fresh every iteration from a
counter-based stream keyed by the run seed, so a run is fully determined
by its configuration.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
import time
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .bending import BendingConfig, BendingModule, make_bm
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
    TrainingDivergedError,
)
from .generator import LatentBatch, LayeredGenerator, forward_with_injection
from .objectives import Embedder, LossConfig, loss_fn
from .rng import philox, standard_normal

CHECKPOINT_FORMAT = "bm-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Full hyperparameter record of one training run."""

    layer_index: int
    loss: LossConfig = field(default_factory=LossConfig)
    iterations: int = 1000
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 1

    def validate(self) -> None:
        if self.layer_index < 1:
            raise ConfigError(f"layer_index must be >= 1, got {self.layer_index}")
        self.loss.validate()
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        loss = data.pop("loss", {})
        cfg = cls(loss=LossConfig(**loss), **data)
        cfg.validate()
        return cfg


@dataclass
class TrainResult:
    final_bm: BendingModule
    loss_history: list[tuple[int, float]]  # (iteration, loss), every log_every-th
    wall_time: float
    config_echo: TrainConfig


class LatentStream:
    """Sequential standard-normal batches from one counter-based stream."""

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = philox(seed)

    def draw(self, batch: int, latent_dim: int) -> LatentBatch:
        if batch < 1 or latent_dim < 1:
            raise ConfigError(f"batch and latent_dim must be >= 1, got {batch}, {latent_dim}")
        return LatentBatch(values=standard_normal(self._rng, (batch, latent_dim)), seed=self.seed)


def sample_latents(seed: int, batch: int = 16, latent_dim: int = 64) -> LatentBatch:
    """First batch of the stream keyed by `seed`; bitwise reproducible."""
    return LatentStream(seed).draw(batch, latent_dim)


def train_bm(
    generator: LayeredGenerator,
    bm: BendingModule,
    embedder: Embedder,
    prompt: str,
    cfg: TrainConfig,
) -> TrainResult:
    """Optimize `bm` in place against the prompt objective; returns the run record.

    Raises TrainingDivergedError (with the iteration index) if the loss
    leaves the finite range, rather than clipping silently.
    """
    cfg.validate()
    if not prompt:
        raise ConfigError("prompt must be non-empty")
    if not 1 <= cfg.layer_index <= generator.layer_count:
        raise ConfigError(
            f"layer_index {cfg.layer_index} outside 1..{generator.layer_count}"
        )
    expected = generator.layer_channels[cfg.layer_index - 1]
    if bm.config.channels != expected:
        raise ShapeError(
            f"bending module has {bm.config.channels} channels, "
            f"layer {cfg.layer_index} has {expected}"
        )
    if cfg.loss.kind == "infonce" and cfg.batch_size < 2:
        warnings.warn("infonce with batch_size < 2 has no negatives", stacklevel=2)

    start = time.perf_counter()
    prompt_embedding = embedder.embed_text(prompt).detach()
    objective = loss_fn(cfg.loss)
    opt = torch.optim.Adam(
        bm.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )
    stream = LatentStream(cfg.seed)
    history: list[tuple[int, float]] = []
    for it in range(cfg.iterations):
        z = stream.draw(cfg.batch_size, generator.latent_dim)
        images, _ = forward_with_injection(generator, z, cfg.layer_index, bm)
        embeddings = embedder.embed_images(images)
        loss = objective(embeddings, prompt_embedding)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(iteration=it, value=value)
        if it % cfg.log_every == 0:
            history.append((it, value))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return TrainResult(
        final_bm=bm,
        loss_history=history,
        wall_time=time.perf_counter() - start,
        config_echo=cfg,
    )


# --- checkpoint archive ---------------------------------------------------


def save_checkpoint(
    bm: BendingModule,
    cfg: TrainConfig,
    path: str | Path,
    extra: dict | None = None,
) -> None:
    """Write a self-describing archive of the module and its run config.

    Parameters are stored as named 64-bit arrays; `extra` is an optional
    JSON-serializable blob (the CLI stores the full run configuration there
    so a checkpoint suffices to regenerate images). The write goes to a
    temp file first and is renamed into place atomically.
    """
    path = Path(path)
    params = {name: p.detach().numpy() for name, p in bm.named_parameters()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "bending": dataclasses.asdict(bm.config),
        "train": cfg.to_dict(),
        "extra": extra,
        "params": sorted(params),
    }
    arrays = {f"param.{name}": value for name, value in params.items()}
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            np.savez(handle, meta=json.dumps(meta), **arrays)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _read_archive(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            if "meta" not in archive:
                raise CheckpointError(f"{path}: missing 'meta' entry")
            meta = json.loads(str(archive["meta"]))
            arrays = {k: archive[k] for k in archive.files if k != "meta"}
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, ValueError, KeyError, json.JSONDecodeError, EOFError) as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unexpected format tag {meta.get('format')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: version {meta.get('version')!r}, this build reads {CHECKPOINT_VERSION}"
        )
    return meta, arrays


def load_checkpoint(path: str | Path) -> tuple[BendingModule, TrainConfig]:
    """Rebuild the module bitwise-identically from `save_checkpoint` output."""
    path = Path(path)
    meta, arrays = _read_archive(path)
    try:
        bending_cfg = BendingConfig(**meta["bending"])
        train_cfg = TrainConfig.from_dict(meta["train"])
        bm = make_bm(bending_cfg, seed=0)
        with torch.no_grad():
            for name, param in bm.named_parameters():
                key = f"param.{name}"
                if key not in arrays:
                    raise CheckpointError(f"{path}: missing parameter array {key!r}")
                array = np.asarray(arrays[key], dtype=np.float64)
                if tuple(array.shape) != tuple(param.shape):
                    raise CheckpointError(
                        f"{path}: {key!r} has shape {array.shape}, expected {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(array))
    except (TypeError, KeyError) as exc:
        raise CheckpointError(f"{path}: malformed metadata ({exc})") from exc
    return bm, train_cfg


def load_run_metadata(path: str | Path) -> dict:
    """The `extra` blob stored alongside a checkpoint; empty dict if none."""
    meta, _ = _read_archive(Path(path))
    return meta.get("extra") or {}
