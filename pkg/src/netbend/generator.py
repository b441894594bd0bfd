"""Layered feed-forward image generators with tappable activation maps.

A generator here is a frozen stack: a dense stem mapping the latent vector
to a 4x4 base map, one upsampling convolution block per layer (2x nearest
neighbor, 3x3 'same' conv, leaky ReLU), and a 3x3 conv head squashed into
[-1, 1] by tanh. The activation map after any block can be tapped and
replaced, which is the whole point: a bending module is injected there.

Layer indices are 1-based. All parameters are frozen at construction;
nothing in this package ever trains a generator.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .bending import BendingModule
from .errors import (
    CheckpointError,
    ConfigError,
    InvalidLayerError,
    ShapeError,
    UnknownAdapterError,
)
from .rng import fan_in_uniform, philox

BASE_SIZE = 4
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LatentBatch:
    """Noise input to a generator, tagged with the seed that produced it."""

    values: Tensor  # [batch, latent_dim]
    seed: int

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LayerDescriptor:
    index: int  # 1-based
    channels: int
    height: int
    width: int


class LayeredGenerator(nn.Module):
    """Frozen latent-to-image stack with one tappable map per block."""

    def __init__(
        self,
        latent_dim: int,
        base_channels: int,
        layer_channels: Sequence[int],
        weights: Mapping[str, np.ndarray],
    ):
        super().__init__()
        if not layer_channels:
            raise ConfigError("layer_channels must be non-empty")
        if latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        self.layer_channels = tuple(int(c) for c in layer_channels)

        self.stem = nn.Linear(latent_dim, base_channels * BASE_SIZE * BASE_SIZE, dtype=torch.float64)
        blocks = []
        in_ch = base_channels
        for out_ch in self.layer_channels:
            blocks.append(nn.Conv2d(in_ch, out_ch, 3, padding=1, dtype=torch.float64))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(in_ch, 3, 3, padding=1, dtype=torch.float64)
        self._load_weights(weights)
        # frozen contract: generator parameters never enter a differentiation set
        for p in self.parameters():
            p.requires_grad_(False)

    def _load_weights(self, weights: Mapping[str, np.ndarray]) -> None:
        named = {"stem": self.stem, "head": self.head}
        named.update({f"block{i}": blk for i, blk in enumerate(self.blocks, start=1)})
        with torch.no_grad():
            for name, module in named.items():
                for field in ("weight", "bias"):
                    key = f"{name}.{field}"
                    if key not in weights:
                        raise CheckpointError(f"missing weight array {key!r}")
                    array = np.asarray(weights[key], dtype=np.float64)
                    target = getattr(module, field)
                    if tuple(array.shape) != tuple(target.shape):
                        raise CheckpointError(
                            f"array {key!r} has shape {array.shape}, expected {tuple(target.shape)}"
                        )
                    target.copy_(torch.from_numpy(array))

    @property
    def layer_count(self) -> int:
        return len(self.blocks)

    @property
    def output_shape(self) -> tuple[int, int, int]:
        side = BASE_SIZE * (2 ** self.layer_count)
        return (3, side, side)

    def descriptors(self) -> list[LayerDescriptor]:
        out = []
        for i, ch in enumerate(self.layer_channels, start=1):
            side = BASE_SIZE * (2**i)
            out.append(LayerDescriptor(index=i, channels=ch, height=side, width=side))
        return out

    def initial_map(self, z: Tensor) -> Tensor:
        base = self.stem(z)
        return base.reshape(z.shape[0], self.base_channels, BASE_SIZE, BASE_SIZE)

    def block_forward(self, index: int, x: Tensor) -> Tensor:
        """Apply block `index` (1-based): upsample, conv, leaky ReLU."""
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.blocks[index - 1](up), LEAKY_SLOPE)

    def head_forward(self, x: Tensor) -> Tensor:
        return torch.tanh(self.head(x))

    def forward(self, z: Tensor) -> Tensor:
        x = self.initial_map(z)
        for i in range(1, self.layer_count + 1):
            x = self.block_forward(i, x)
        return self.head_forward(x)


def list_layers(generator: LayeredGenerator) -> list[LayerDescriptor]:
    """Descriptors of every tappable layer, index ascending from 1."""
    return generator.descriptors()


def forward_with_injection(
    generator: LayeredGenerator,
    z: LatentBatch | Tensor,
    layer_index: int,
    bm: BendingModule | None = None,
) -> tuple[Tensor, Tensor]:
    """Forward pass with the map at `layer_index` optionally bent.

    Runs blocks 1..layer_index, applies `bm` to the tapped activation map
    (identity when None), and feeds the result through the remaining blocks
    and the head. Returns (images, tapped map after bending). Gradients
    reach only the bending module's parameters; the generator is frozen.
    """
    values = z.values if isinstance(z, LatentBatch) else z
    if not 1 <= layer_index <= generator.layer_count:
        raise InvalidLayerError(
            f"layer_index {layer_index} outside 1..{generator.layer_count}"
        )
    if bm is not None:
        expected = generator.layer_channels[layer_index - 1]
        if bm.config.channels != expected:
            raise ShapeError(
                f"bending module has {bm.config.channels} channels, "
                f"layer {layer_index} has {expected}"
            )
    x = generator.initial_map(values)
    for i in range(1, layer_index + 1):
        x = generator.block_forward(i, x)
    tapped = bm(x) if bm is not None else x
    x = tapped
    for i in range(layer_index + 1, generator.layer_count + 1):
        x = generator.block_forward(i, x)
    return generator.head_forward(x), tapped


def build_toy_generator(
    seed: int,
    layer_channels: Sequence[int] = (32, 16),
    latent_dim: int = 64,
) -> LayeredGenerator:
    """Deterministic desk-scale generator; no external weights needed.

    Weights are fan-in-uniform draws from a counter-based stream keyed by
    `seed`, so the same call always builds the same generator. The base
    map uses the first entry of `layer_channels` as its channel count.
    """
    if not layer_channels:
        raise ConfigError("layer_channels must be non-empty")
    if latent_dim < 1:
        raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
    base_channels = int(layer_channels[0])
    rng = philox(seed)
    weights: dict[str, np.ndarray] = {}

    def draw(key: str, shape: tuple[int, ...], fan_in: int) -> None:
        weights[key] = fan_in_uniform(rng, shape, fan_in).numpy()

    stem_out = base_channels * BASE_SIZE * BASE_SIZE
    draw("stem.weight", (stem_out, latent_dim), latent_dim)
    draw("stem.bias", (stem_out,), latent_dim)
    in_ch = base_channels
    for i, out_ch in enumerate(layer_channels, start=1):
        fan_in = in_ch * 9
        draw(f"block{i}.weight", (out_ch, in_ch, 3, 3), fan_in)
        draw(f"block{i}.bias", (out_ch,), fan_in)
        in_ch = out_ch
    draw("head.weight", (3, in_ch, 3, 3), in_ch * 9)
    draw("head.bias", (3,), in_ch * 9)
    return LayeredGenerator(latent_dim, base_channels, layer_channels, weights)


# --- external checkpoint adapters ---------------------------------------

GENERATOR_CHECKPOINT_FORMAT = "upsample-gan"
GENERATOR_CHECKPOINT_VERSION = 1

_GENERATOR_ADAPTERS: dict[str, Callable[[Path], LayeredGenerator]] = {}


def register_generator_adapter(name: str, loader: Callable[[Path], LayeredGenerator]) -> None:
    _GENERATOR_ADAPTERS[name] = loader


def load_external_generator(path: str | Path, adapter_name: str) -> LayeredGenerator:
    """Load a pretrained generator through a named adapter.

    The adapter owns its archive format; loading never mutates the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"generator checkpoint not found: {path}")
    if adapter_name not in _GENERATOR_ADAPTERS:
        known = sorted(_GENERATOR_ADAPTERS)
        raise UnknownAdapterError(f"unknown generator adapter {adapter_name!r}; known: {known}")
    return _GENERATOR_ADAPTERS[adapter_name](path)


def _load_upsample_gan_npz(path: Path) -> LayeredGenerator:
    """Adapter for the butterfly-GAN layout, stored as a self-describing npz.

    Expected archive contents:

      meta           JSON string: {"format": "upsample-gan", "version": 1,
                     "latent_dim": L, "base_channels": C0,
                     "layer_channels": [C1, ..., Cn]}
      stem.weight    [C0*16, L]        stem.bias   [C0*16]
      block<i>.weight [Ci, C(i-1), 3, 3]  block<i>.bias [Ci]   for i = 1..n
      head.weight    [3, Cn, 3, 3]     head.bias   [3]

    Converting a published checkpoint into this layout is a one-time
    offline step; the layer ordering must follow the source model so that
    layer indices keep their meaning.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            if "meta" not in archive:
                raise CheckpointError(f"{path}: missing 'meta' entry")
            meta = json.loads(str(archive["meta"]))
            if meta.get("format") != GENERATOR_CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: unexpected format tag {meta.get('format')!r}")
            if meta.get("version") != GENERATOR_CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: unsupported version {meta.get('version')!r}"
                )
            arrays = {k: archive[k] for k in archive.files if k != "meta"}
        return LayeredGenerator(
            latent_dim=int(meta["latent_dim"]),
            base_channels=int(meta["base_channels"]),
            layer_channels=[int(c) for c in meta["layer_channels"]],
            weights=arrays,
        )
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, ValueError, KeyError, json.JSONDecodeError, EOFError, io.UnsupportedOperation) as exc:
        raise CheckpointError(f"cannot parse generator checkpoint {path}: {exc}") from exc


register_generator_adapter("butterflygan", _load_upsample_gan_npz)
