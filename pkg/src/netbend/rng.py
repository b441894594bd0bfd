"""Deterministic random streams built on the counter-based Philox generator.

Every random draw in this package goes through one of these helpers so that
a (seed, shape) pair yields bitwise-identical values across processes and
platforms, independent of any global RNG state.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import Tensor


def philox(seed: int) -> np.random.Generator:
    """Fresh counter-based generator keyed by `seed`."""
    return np.random.Generator(np.random.Philox(key=seed))


def standard_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    return torch.from_numpy(rng.standard_normal(shape))


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    """Uniform draw on [-1/sqrt(fan_in), 1/sqrt(fan_in)], as float64."""
    bound = 1.0 / math.sqrt(fan_in)
    return torch.from_numpy(rng.uniform(-bound, bound, size=shape))
