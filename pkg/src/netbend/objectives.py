"""Embedding-space objectives over a pluggable image/text embedder.

Two losses are provided. The great-circle loss pulls every image embedding
toward the prompt embedding along the unit sphere. The contrastive loss
additionally pushes the images in a batch apart from each other, trading
prompt fidelity for output diversity.

Both losses consume unit-norm embeddings; callers normalize first (the
embedders here always return unit rows).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, DegenerateEmbeddingError, ShapeError, UnknownAdapterError
from .rng import philox

LOSS_KINDS = ("great_circle", "infonce")

# arccos has an unbounded derivative at +-1; clamping keeps gradients finite
# when an image embedding reaches the prompt exactly
ARCCOS_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    kind: str = "great_circle"
    temperature: float = 0.001  # contrastive loss only

    def validate(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


def normalize(v: Tensor) -> Tensor:
    """Project onto the unit sphere; rows independently for 2-D input."""
    norms = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise DegenerateEmbeddingError("cannot normalize a zero vector")
    return v / norms


class Embedder(Protocol):
    """Maps image batches and prompt strings into one shared unit-norm space.

    `embed_images` must be differentiable with respect to the pixels; both
    maps must be deterministic.
    """

    dim: int

    def embed_images(self, images: Tensor) -> Tensor: ...

    def embed_text(self, prompt: str) -> Tensor: ...


class ToyEmbedder(nn.Module):
    """Deterministic, differentiable stand-in for a pretrained dual embedder.

    Images are average-pooled to 8x8, flattened to 192 values and passed
    through a fixed seed-derived projection; prompts are hashed into a
    192-bin bag over byte unigrams and bigrams and passed through the same
    projection. Outputs are unit-norm, so dot products are cosines.
    """

    POOL = 8

    def __init__(self, seed: int = 0, dim: int = 32):
        super().__init__()
        if dim < 2:
            raise ConfigError(f"embedding dim must be >= 2, got {dim}")
        self.seed = seed
        self.dim = dim
        features = 3 * self.POOL * self.POOL
        proj = philox(seed).standard_normal((features, dim)) / np.sqrt(features)
        self.register_buffer("projection", torch.from_numpy(proj))

    def embed_images(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected [batch, 3, h, w] images, got {tuple(images.shape)}")
        pooled = F.adaptive_avg_pool2d(images, (self.POOL, self.POOL))
        flat = pooled.reshape(images.shape[0], -1)
        return normalize(flat @ self.projection)

    def embed_text(self, prompt: str) -> Tensor:
        bag = torch.from_numpy(self._prompt_bag(prompt))
        return normalize(bag @ self.projection)

    def _prompt_bag(self, prompt: str) -> np.ndarray:
        data = prompt.encode("utf-8")
        grams = [data[i : i + 1] for i in range(len(data))]
        grams += [data[i : i + 2] for i in range(len(data) - 1)]
        bag = np.zeros(self.projection.shape[0], dtype=np.float64)
        for gram in grams:
            digest = hashlib.blake2b(gram, digest_size=4).digest()
            bag[int.from_bytes(digest, "little") % bag.shape[0]] += 1.0
        return bag

    def forward(self, images: Tensor) -> Tensor:
        return self.embed_images(images)


def great_circle_loss(image_embeddings: Tensor, prompt_embedding: Tensor) -> Tensor:
    """Mean squared arc length between each image embedding and the prompt.

    arccos(q . k)^2 averaged over the batch, with the dot product clamped
    away from +-1 to keep the gradient finite at the minimum. Inputs are
    assumed unit-norm.
    """
    if image_embeddings.shape[-1] != prompt_embedding.shape[-1]:
        raise ShapeError(
            f"embedding dims differ: {image_embeddings.shape[-1]} vs {prompt_embedding.shape[-1]}"
        )
    cos = image_embeddings @ prompt_embedding
    cos = torch.clamp(cos, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    return torch.acos(cos).square().mean()


def infonce_from_similarities(positive: Tensor, pairwise: Tensor, temperature: float) -> Tensor:
    """Contrastive loss from precomputed similarities.

    `positive[i]` is the image-to-prompt similarity for sample i and
    `pairwise[i, j]` the image-to-image similarity; the diagonal is ignored.
    Per sample:

        -log( exp(pos_i / t) / (exp(pos_i / t) + sum_{j != i} exp(pair_ij / t)) )

    evaluated in log-sum-exp form with max subtraction, so temperatures as
    small as 1e-3 cannot overflow. Averaged over the batch; always >= 0.
    A batch of one has no negatives and yields exactly zero.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    batch = positive.shape[0]
    if pairwise.shape != (batch, batch):
        raise ShapeError(
            f"pairwise similarities must be [{batch}, {batch}], got {tuple(pairwise.shape)}"
        )
    pos_logits = positive / temperature
    neg_logits = pairwise / temperature
    mask = torch.eye(batch, dtype=torch.bool, device=pairwise.device)
    neg_logits = neg_logits.masked_fill(mask, float("-inf"))
    logits = torch.cat([pos_logits.unsqueeze(1), neg_logits], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos_logits).mean()


def infonce_loss(image_embeddings: Tensor, prompt_embedding: Tensor, temperature: float) -> Tensor:
    """Batch-contrastive loss; negatives are the other images in the batch.

    Inputs are assumed unit-norm. Differentiable with respect to the image
    embeddings.
    """
    if image_embeddings.shape[-1] != prompt_embedding.shape[-1]:
        raise ShapeError(
            f"embedding dims differ: {image_embeddings.shape[-1]} vs {prompt_embedding.shape[-1]}"
        )
    positive = image_embeddings @ prompt_embedding
    pairwise = image_embeddings @ image_embeddings.T
    return infonce_from_similarities(positive, pairwise, temperature)


def loss_fn(config: LossConfig) -> Callable[[Tensor, Tensor], Tensor]:
    """Bind a LossConfig to a (image embeddings, prompt embedding) callable."""
    config.validate()
    if config.kind == "great_circle":
        return great_circle_loss
    return lambda embs, prompt: infonce_loss(embs, prompt, config.temperature)


def mean_pairwise_cosine(embeddings: Tensor) -> float:
    """Mean off-diagonal cosine similarity; diversity proxy for a batch."""
    batch = embeddings.shape[0]
    if batch < 2:
        return float("nan")
    sims = embeddings @ embeddings.T
    off_diag = sims.sum() - sims.diagonal().sum()
    return float(off_diag / (batch * (batch - 1)))


_EMBEDDER_ADAPTERS: dict[str, Callable[[Path], Embedder]] = {}


def register_embedder_adapter(name: str, loader: Callable[[Path], Embedder]) -> None:
    """Expose an external pretrained embedder under `name`.

    The loader receives the weight path and must return an object satisfying
    the Embedder protocol; the weight-file format is adapter-specific.
    """
    _EMBEDDER_ADAPTERS[name] = loader


def load_external_embedder(path: str | Path, adapter_name: str) -> Embedder:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"embedder weights not found: {path}")
    if adapter_name not in _EMBEDDER_ADAPTERS:
        known = sorted(_EMBEDDER_ADAPTERS) or ["<none registered>"]
        raise UnknownAdapterError(f"unknown embedder adapter {adapter_name!r}; known: {known}")
    return _EMBEDDER_ADAPTERS[adapter_name](path)
