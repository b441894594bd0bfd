"""Bending modules: small trainable same-shape transforms on activation maps.

Three families share one two-layer convolutional core (3x3 kernels, 'same'
padding, hidden and output channels equal to the input channels, activation
after the first convolution only):

  conv       the plain core
  coord_conv x/y position channels (optionally center distance r) are
             concatenated to the input before the core, letting the module
             build spatially varying structure
  sort_conv  a score head plus a differentiable bitonic sorting network
             reorder the map along height or width before the core,
             letting the module rearrange spatial structure

Output shape always equals input shape, so a module can replace the
activation map it consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .diffsort import AXES, permute_axis, row_scores, soft_sort
from .errors import ConfigError, ShapeError
from .rng import fan_in_uniform, philox

FAMILIES = ("conv", "coord_conv", "sort_conv")
ACTIVATIONS = ("relu", "sin")
DEFAULT_STEEPNESS = 50.0


@dataclass(frozen=True)
class BendingConfig:
    """Family and hyperparameters of one bending module.

    `channels` must equal the channel count of the target activation map.
    `include_r` applies to coord_conv only; `sort_axis` and `steepness`
    to sort_conv only (steepness defaults to 50 when left unset).
    `sin_frequency` scales the argument of the sin activation; the plain
    sin(x) default is 1.
    """

    family: str
    channels: int
    activation: str = "relu"
    include_r: bool = False
    sort_axis: str | None = None
    steepness: float | None = None
    sin_frequency: float = 1.0

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.sin_frequency <= 0:
            raise ConfigError(f"sin_frequency must be positive, got {self.sin_frequency}")
        if self.include_r and self.family != "coord_conv":
            raise ConfigError("include_r only applies to the coord_conv family")
        if self.family == "sort_conv":
            if self.sort_axis not in AXES:
                raise ConfigError(f"sort_conv requires sort_axis in {AXES}, got {self.sort_axis!r}")
            if self.steepness is not None and self.steepness <= 0:
                raise ConfigError(f"steepness must be positive, got {self.steepness}")
        else:
            if self.sort_axis is not None:
                raise ConfigError(f"sort_axis only applies to sort_conv, got family {self.family!r}")
            if self.steepness is not None:
                raise ConfigError(f"steepness only applies to sort_conv, got family {self.family!r}")

    @property
    def effective_steepness(self) -> float:
        return DEFAULT_STEEPNESS if self.steepness is None else self.steepness

    @property
    def input_channels(self) -> int:
        """Channels entering the first convolution (coordinates included)."""
        if self.family == "coord_conv":
            return self.channels + (3 if self.include_r else 2)
        return self.channels


@dataclass(frozen=True)
class CoordinateGrid:
    """Normalized position channels for an H x W map.

    x varies 0 to 1 along width, y along height; a length-one axis maps to
    0. r is the Euclidean distance from the map center (x, y) = (0.5, 0.5),
    which is sqrt(0.5) at the corners; it is not re-normalized.
    """

    x: Tensor  # [h, w]
    y: Tensor  # [h, w]
    r: Tensor | None

    def stacked(self) -> Tensor:
        parts = [self.x, self.y] + ([self.r] if self.r is not None else [])
        return torch.stack(parts, dim=0)


def coordinate_grid(height: int, width: int, include_r: bool = False) -> CoordinateGrid:
    if height < 1 or width < 1:
        raise ConfigError(f"grid dimensions must be >= 1, got {height}x{width}")
    xs = torch.zeros(width, dtype=torch.float64)
    if width > 1:
        xs = torch.arange(width, dtype=torch.float64) / (width - 1)
    ys = torch.zeros(height, dtype=torch.float64)
    if height > 1:
        ys = torch.arange(height, dtype=torch.float64) / (height - 1)
    x = xs.unsqueeze(0).expand(height, width).contiguous()
    y = ys.unsqueeze(1).expand(height, width).contiguous()
    r = None
    if include_r:
        r = torch.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
    return CoordinateGrid(x=x, y=y, r=r)


class BendingModule(nn.Module):
    """One trainable bend, parameterized by a BendingConfig.

    Parameters are drawn fan-in-uniform from a counter-based stream, so
    (config, seed) fully determines the initial weights. Construct through
    `make_bm` to get config validation.
    """

    def __init__(self, config: BendingConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        ch = config.channels
        self.conv1 = nn.Conv2d(config.input_channels, ch, 3, padding=1, dtype=torch.float64)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1, dtype=torch.float64)
        self.score_head = None
        if config.family == "sort_conv":
            self.score_head = nn.Conv2d(ch, 1, 3, padding=1, dtype=torch.float64)
        self._init_parameters(seed)

    def _init_parameters(self, seed: int) -> None:
        rng = philox(seed)
        convs = [self.conv1, self.conv2]
        if self.score_head is not None:
            convs.append(self.score_head)
        with torch.no_grad():
            for conv in convs:
                fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
                conv.weight.copy_(fan_in_uniform(rng, tuple(conv.weight.shape), fan_in))
                conv.bias.copy_(fan_in_uniform(rng, tuple(conv.bias.shape), fan_in))

    def _activate(self, x: Tensor) -> Tensor:
        if self.config.activation == "relu":
            return torch.relu(x)
        return torch.sin(self.config.sin_frequency * x)

    def _rearranged(self, a: Tensor) -> Tensor:
        """Sorting stage for sort_conv; identity for the other families."""
        if self.config.family != "sort_conv":
            return a
        axis = self.config.sort_axis
        scores = row_scores(a, self.score_head, axis)
        _, perm = soft_sort(scores, self.config.effective_steepness)
        return permute_axis(a, perm, axis)

    def _augmented(self, a: Tensor) -> Tensor:
        """Coordinate concatenation for coord_conv; identity otherwise."""
        if self.config.family != "coord_conv":
            return a
        grid = coordinate_grid(a.shape[2], a.shape[3], self.config.include_r)
        channels = grid.stacked().to(dtype=a.dtype, device=a.device)
        channels = channels.unsqueeze(0).expand(a.shape[0], -1, -1, -1)
        return torch.cat([a, channels], dim=1)

    def hidden_map(self, a: Tensor) -> Tensor:
        """Activation map after the first convolution and nonlinearity."""
        self._check_channels(a)
        return self._activate(self.conv1(self._augmented(self._rearranged(a))))

    def forward(self, a: Tensor) -> Tensor:
        return self.conv2(self.hidden_map(a))

    def _check_channels(self, a: Tensor) -> None:
        if a.ndim != 4:
            raise ShapeError(f"activation map must be [batch, c, h, w], got {tuple(a.shape)}")
        if a.shape[1] != self.config.channels:
            raise ShapeError(
                f"module built for {self.config.channels} channels, map has {a.shape[1]}"
            )


def make_bm(config: BendingConfig, seed: int = 0) -> BendingModule:
    """Validated, deterministically initialized bending module."""
    return BendingModule(config, seed)


def apply_bm(bm: BendingModule, a: Tensor) -> Tensor:
    """Transform an activation map; output shape equals input shape."""
    return bm(a)
