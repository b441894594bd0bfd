"""Convert generator output to files.

Generator images live in [-1, 1]; PNG export maps that range linearly onto
0..255 with round-half-even, after clamping.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .errors import ShapeError

GUTTER = 2  # pixels of black between grid tiles


def to_uint8(image: Tensor) -> np.ndarray:
    """[3, H, W] tensor in [-1, 1] -> [H, W, 3] uint8 array."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected [3, H, W], got {tuple(image.shape)}")
    clamped = torch.clamp(image.detach(), -1.0, 1.0).numpy()
    scaled = np.rint((clamped + 1.0) * 127.5)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def export_png(image: Tensor, path: str | Path) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(Path(path), format="PNG")


def grid_array(images: Tensor, columns: int) -> np.ndarray:
    """Tile [N, 3, H, W] into one [rows*H + gutters, cols*W + gutters, 3] array.

    Tiles are laid out row-major with GUTTER black pixels between tiles
    (none on the outer border). Trailing cells of a ragged last row stay black.
    """
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeError(f"expected [N, 3, H, W], got {tuple(images.shape)}")
    if columns < 1:
        raise ShapeError(f"columns must be >= 1, got {columns}")
    count, _, height, width = images.shape
    rows = math.ceil(count / columns)
    canvas = np.zeros(
        (rows * height + (rows - 1) * GUTTER, columns * width + (columns - 1) * GUTTER, 3),
        dtype=np.uint8,
    )
    for k in range(count):
        r, c = divmod(k, columns)
        top = r * (height + GUTTER)
        left = c * (width + GUTTER)
        canvas[top : top + height, left : left + width] = to_uint8(images[k])
    return canvas


def export_grid(images: Tensor, columns: int, path: str | Path) -> None:
    Image.fromarray(grid_array(images, columns), mode="RGB").save(Path(path), format="PNG")
