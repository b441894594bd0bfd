"""Differentiable bitonic sorting networks over batches of score vectors.

A sorting network is a fixed, data-independent schedule of compare-exchange
operations. Relaxing each comparator into a sigmoid-weighted mix of its two
inputs makes the whole network differentiable; composing the per-comparator
mix matrices yields a doubly stochastic soft permutation matrix that
converges to the exact ascending-sort permutation as the steepness grows.

The bitonic topology requires the sequence length to be a power of two.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass
from typing import Callable

import torch
from torch import Tensor, nn

from .errors import ConfigError, ShapeError, SizeError

AXES = ("height", "width")


@dataclass(frozen=True)
class SoftPermutation:
    """Per-sample doubly stochastic matrices, one per batch element.

    Row i of each matrix holds the mixing weights that produce the i-th
    smallest output, so `matrix @ values` reorders `values` ascending in
    the hard (large steepness) limit.
    """

    matrix: Tensor  # [batch, n, n]
    steepness: float

    @property
    def batch(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@functools.lru_cache(maxsize=None)
def _comparator_stages(n: int) -> tuple[tuple[Tensor, Tensor, Tensor], ...]:
    """Bitonic schedule for length n as (low indices, high indices, direction signs).

    Each stage pairs every position with exactly one partner, so a stage is
    applied as one vectorized mix. Sign +1 sorts the pair ascending (min to
    the low index), -1 descending.
    """
    stages = []
    span = 2
    while span <= n:
        gap = span >> 1
        while gap >= 1:
            lo, hi, sign = [], [], []
            for i in range(n):
                partner = i ^ gap
                if partner > i:
                    lo.append(i)
                    hi.append(partner)
                    sign.append(-1.0 if i & span else 1.0)
            stages.append(
                (
                    torch.tensor(lo, dtype=torch.long),
                    torch.tensor(hi, dtype=torch.long),
                    torch.tensor(sign, dtype=torch.float64),
                )
            )
            gap >>= 1
        span <<= 1
    return tuple(stages)


def soft_sort(
    scores: Tensor,
    steepness: float,
    sigmoid_fn: Callable[[Tensor], Tensor] = torch.sigmoid,
) -> tuple[Tensor, SoftPermutation]:
    """Relaxed ascending sort of each row of `scores` ([batch, n]).

    Every comparator on positions (i, j), i < j, computes a swap weight
    w = sigmoid(steepness * (v_i - v_j)) from the current values and mixes

        out_i = (1 - w) * v_i + w * v_j
        out_j = w * v_i + (1 - w) * v_j

    which approaches (min, max) as steepness grows. The same weights mix
    the rows of a running matrix, giving the composed soft permutation.
    Returns (sorted values, permutation); sorted values are computed as
    `perm.matrix @ scores`, so the two outputs are consistent by
    construction. Differentiable in `scores`.

    The relaxation sigmoid is pluggable; any monotonic map from R onto
    (0, 1) with f(0) = 0.5 preserves the doubly stochastic property.
    """
    if scores.ndim != 2:
        raise ShapeError(f"scores must be [batch, n], got shape {tuple(scores.shape)}")
    if steepness <= 0:
        raise ConfigError(f"steepness must be positive, got {steepness}")
    n = scores.shape[1]
    if not _is_power_of_two(n):
        raise SizeError(f"bitonic network needs a power-of-two length, got n={n}")

    batch = scores.shape[0]
    values = scores
    perm = torch.eye(n, dtype=scores.dtype, device=scores.device).expand(batch, n, n)
    for lo, hi, sign in _comparator_stages(n):
        sign = sign.to(scores.dtype)
        v_lo, v_hi = values[:, lo], values[:, hi]
        w = sigmoid_fn(steepness * sign * (v_lo - v_hi))
        # every position appears in exactly one pair, so a stage is a
        # re-ordered concatenation of the mixed halves
        order = torch.argsort(torch.cat([lo, hi]))
        values = torch.cat(
            [(1 - w) * v_lo + w * v_hi, w * v_lo + (1 - w) * v_hi], dim=1
        )[:, order]
        p_lo, p_hi = perm[:, lo, :], perm[:, hi, :]
        w_col = w.unsqueeze(-1)
        perm = torch.cat(
            [(1 - w_col) * p_lo + w_col * p_hi, w_col * p_lo + (1 - w_col) * p_hi],
            dim=1,
        )[:, order, :]

    soft_perm = SoftPermutation(matrix=perm, steepness=float(steepness))
    sorted_values = torch.bmm(perm, scores.unsqueeze(-1)).squeeze(-1)
    return sorted_values, soft_perm


def hard_decode(perm: SoftPermutation) -> Tensor:
    """Argmax decode of each matrix row: index of the i-th smallest input.

    Emits a warning when any decoded row set contains duplicates, i.e. the
    matrix is too diffuse to represent a valid permutation.
    """
    indices = perm.matrix.argmax(dim=2)
    sorted_idx = indices.sort(dim=1).values
    if bool((sorted_idx[:, 1:] == sorted_idx[:, :-1]).any()):
        warnings.warn(
            "hard_decode produced duplicate indices; the soft permutation is "
            "too diffuse to decode into a valid permutation",
            stacklevel=2,
        )
    return indices


def permute_axis(a: Tensor, perm: SoftPermutation, axis: str) -> Tensor:
    """Reorder an activation map [batch, c, h, w] along `axis` by `perm`.

    For axis="height": out[b, c, i, w] = sum_k perm[b, i, k] * a[b, c, k, w],
    and symmetrically for "width". Differentiable in both arguments.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    if a.ndim != 4:
        raise ShapeError(f"activation map must be [batch, c, h, w], got {tuple(a.shape)}")
    if perm.batch != a.shape[0]:
        raise ShapeError(f"permutation batch {perm.batch} != activation batch {a.shape[0]}")
    length = a.shape[2] if axis == "height" else a.shape[3]
    if perm.n != length:
        raise ShapeError(f"permutation size {perm.n} != {axis} {length}")
    if axis == "height":
        return torch.einsum("bik,bckw->bciw", perm.matrix, a)
    return torch.einsum("bjk,bchk->bchj", perm.matrix, a)


def row_scores(a: Tensor, score_head: nn.Conv2d, axis: str) -> Tensor:
    """One score per slice of `a` along `axis`, shape [batch, n].

    A 3x3 same-padded convolution collapses the map to a single channel,
    then the mean over the non-sorted spatial axis leaves n = height
    (axis="height") or n = width (axis="width") scores per sample.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    if a.ndim != 4:
        raise ShapeError(f"activation map must be [batch, c, h, w], got {tuple(a.shape)}")
    if a.shape[1] != score_head.in_channels:
        raise ShapeError(
            f"score head expects {score_head.in_channels} channels, map has {a.shape[1]}"
        )
    per_cell = score_head(a).squeeze(1)  # [batch, h, w]
    return per_cell.mean(dim=2) if axis == "height" else per_cell.mean(dim=1)
