"""Delimited and rendered run reports: loss curves and similarity sheets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch
from torch import Tensor

from .errors import ShapeError

LOSS_HEADER = ("iteration", "loss")
SIMILARITY_HEADER = ("variant", "seed", "mean_cosine")


def write_loss_history(history: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(LOSS_HEADER)
        for iteration, loss in history:
            writer.writerow([iteration, repr(float(loss))])


def read_loss_history(path: str | Path) -> list[tuple[int, float]]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != LOSS_HEADER:
            raise ValueError(f"unexpected loss history header: {header}")
        return [(int(it), float(loss)) for it, loss in reader]


def save_loss_curve(
    history: Sequence[tuple[int, float]], path: str | Path, title: str = "training loss"
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if history:
        iterations, losses = zip(*history)
        ax.plot(iterations, losses, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@dataclass(frozen=True)
class VariantSimilarity:
    """Gallery-level embedding similarity for one trained variant."""

    label: str
    seeds: list[int]
    per_seed: list[float]  # each seed's mean cosine against the rest of the gallery
    overall: float  # mean over all off-diagonal pairs


def variant_similarity(label: str, seeds: Sequence[int], embeddings: Tensor) -> VariantSimilarity:
    """Row-wise and overall off-diagonal cosine means for unit embeddings [N, D]."""
    if embeddings.ndim != 2 or embeddings.shape[0] != len(seeds):
        raise ShapeError(
            f"expected [{len(seeds)}, D] embeddings, got {tuple(embeddings.shape)}"
        )
    embeddings = embeddings.detach()
    n = embeddings.shape[0]
    if n < 2:
        return VariantSimilarity(label, list(seeds), [float("nan")] * n, float("nan"))
    gram = embeddings @ embeddings.T
    off = gram - torch.diag_embed(torch.diagonal(gram))
    per_seed = (off.sum(dim=1) / (n - 1)).tolist()
    overall = float(off.sum() / (n * (n - 1)))
    return VariantSimilarity(label, list(seeds), per_seed, overall)


def write_similarity_csv(variants: Sequence[VariantSimilarity], path: str | Path) -> None:
    """Per-seed rows for each variant, then one `all` summary row per variant."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SIMILARITY_HEADER)
        for variant in variants:
            for seed, value in zip(variant.seeds, variant.per_seed):
                writer.writerow([variant.label, seed, repr(value)])
        for variant in variants:
            writer.writerow([variant.label, "all", repr(variant.overall)])


def save_similarity_figure(variants: Sequence[VariantSimilarity], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant in variants:
        line = ax.plot(
            variant.seeds, variant.per_seed, marker="o", ms=4, lw=1.0, label=variant.label
        )[0]
        ax.axhline(variant.overall, color=line.get_color(), ls="--", lw=0.8, alpha=0.6)
    ax.set_xlabel("seed")
    ax.set_ylabel("mean cosine vs rest of gallery")
    ax.set_title("image-embedding similarity per variant")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
