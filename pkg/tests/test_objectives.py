"""Embedding losses and the toy dual embedder: analytic fixtures first."""

import math

import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from netbend.errors import (
    ConfigError,
    DegenerateEmbeddingError,
    ShapeError,
    UnknownAdapterError,
)
from netbend.objectives import (
    LossConfig,
    ToyEmbedder,
    great_circle_loss,
    infonce_from_similarities,
    infonce_loss,
    load_external_embedder,
    loss_fn,
    mean_pairwise_cosine,
    normalize,
    register_embedder_adapter,
)

from helpers import gradient_error, rand_tensor, randn_tensor


def unit(*values):
    return normalize(torch.tensor(values, dtype=torch.float64))


# --- normalize ----------------------------------------------------------------


def test_normalize_three_four_five():
    assert torch.equal(unit(3.0, 4.0), torch.tensor([0.6, 0.8], dtype=torch.float64))


def test_normalize_is_idempotent_on_unit_vectors():
    v = unit(1.0, 0.0, 0.0)
    assert_allclose(normalize(v).numpy(), v.numpy(), rtol=0, atol=1e-15)


def test_normalize_rows_of_a_batch():
    batch = torch.tensor([[3.0, 4.0], [0.0, 2.0]], dtype=torch.float64)
    out = normalize(batch)
    assert_allclose(out.norm(dim=1).numpy(), [1.0, 1.0], rtol=0, atol=1e-15)


def test_normalize_rejects_zero_vectors():
    with pytest.raises(DegenerateEmbeddingError):
        normalize(torch.zeros(2, dtype=torch.float64))
    with pytest.raises(DegenerateEmbeddingError):
        normalize(torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=torch.float64))


# --- great-circle loss ----------------------------------------------------------


def test_great_circle_orthogonal_fixture():
    q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    k = torch.tensor([0.0, 1.0], dtype=torch.float64)
    assert_allclose(float(great_circle_loss(q, k)), (math.pi / 2) ** 2, rtol=0, atol=1e-9)


def test_great_circle_cos_half_fixture():
    q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    k = torch.tensor([0.5, math.sqrt(3.0) / 2.0], dtype=torch.float64)
    assert_allclose(float(great_circle_loss(q, k)), (math.pi / 3) ** 2, rtol=0, atol=1e-9)


def test_great_circle_aligned_is_zero_up_to_clamp():
    k = unit(0.3, -0.2, 0.9)
    loss = float(great_circle_loss(k.unsqueeze(0), k))
    assert 0.0 <= loss < 3e-7  # arccos is clamped at 1 - 1e-7


def test_great_circle_batch_mean():
    q = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    k = torch.tensor([0.0, 1.0], dtype=torch.float64)
    # the aligned sample contributes ~2e-7 through the arccos clamp
    expected = ((math.pi / 2) ** 2 + 0.0) / 2.0
    assert_allclose(float(great_circle_loss(q, k)), expected, rtol=0, atol=2e-7)


def test_great_circle_range_and_minimum():
    q = normalize(randn_tensor(0, (16, 8)))
    k = normalize(randn_tensor(1, (8,)))
    loss = float(great_circle_loss(q, k))
    assert 0.0 <= loss <= math.pi**2 + 1e-6
    aligned = k.unsqueeze(0).expand(4, 8)
    assert float(great_circle_loss(aligned, k)) < 3e-7


def test_great_circle_dim_mismatch():
    with pytest.raises(ShapeError):
        great_circle_loss(torch.zeros(2, 4, dtype=torch.float64), unit(1.0, 0.0))


# --- InfoNCE --------------------------------------------------------------------


def test_infonce_single_sample_is_exactly_zero():
    q = unit(0.6, 0.8).unsqueeze(0)
    k = unit(0.0, 1.0)
    assert float(infonce_loss(q, k, temperature=1.0)) == 0.0


def test_infonce_similarity_fixture():
    # two queries, both 0.9 to the prompt, 0.1 to each other, at temperature 1:
    # each sample contributes log(1 + exp(-0.8))
    positive = torch.tensor([0.9, 0.9], dtype=torch.float64)
    pairwise = torch.tensor([[1.0, 0.1], [0.1, 1.0]], dtype=torch.float64)
    expected = math.log(1.0 + math.exp(-0.8))
    got = float(infonce_from_similarities(positive, pairwise, temperature=1.0))
    assert_allclose(got, expected, rtol=0, atol=1e-9)


def test_infonce_tiny_temperature_underflows_to_zero():
    positive = torch.tensor([0.9, 0.9], dtype=torch.float64)
    pairwise = torch.tensor([[1.0, 0.1], [0.1, 1.0]], dtype=torch.float64)
    loss = float(infonce_from_similarities(positive, pairwise, temperature=0.001))
    assert math.isfinite(loss)
    assert 0.0 <= loss < 1e-300  # positive logit beats the negative by 800


def test_infonce_vector_api_matches_similarity_api():
    k = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    q1 = torch.tensor([0.9, math.sqrt(1 - 0.81), 0.0], dtype=torch.float64)
    q2 = torch.tensor([0.1, 0.2, math.sqrt(0.95)], dtype=torch.float64)
    q = torch.stack([q1, q2])
    for tau in (1.0, 0.05):
        direct = float(infonce_loss(q, k, temperature=tau))
        via_sims = float(infonce_from_similarities(q @ k, q @ q.T, temperature=tau))
        assert_allclose(direct, via_sims, rtol=1e-12)


def test_infonce_finite_across_the_logit_range():
    # temperature 0.001 maps cosine range [-1, 1] onto logits up to 1000
    for pos, neg in [(-1.0, 1.0), (1.0, -1.0), (0.0, 0.0)]:
        positive = torch.full((3,), pos, dtype=torch.float64)
        pairwise = torch.full((3, 3), neg, dtype=torch.float64)
        loss = float(infonce_from_similarities(positive, pairwise, temperature=0.001))
        assert math.isfinite(loss) and loss >= 0.0


def test_infonce_monotone_in_pairwise_similarity():
    positive = torch.tensor([0.5, 0.5, 0.5], dtype=torch.float64)
    losses = []
    for off in (0.0, 0.3, 0.6):
        pairwise = torch.full((3, 3), off, dtype=torch.float64).fill_diagonal_(1.0)
        losses.append(float(infonce_from_similarities(positive, pairwise, temperature=0.5)))
    assert losses[0] < losses[1] < losses[2]


def test_great_circle_ignores_pairwise_similarity():
    # points on the cone Q·K = c, rotated around K: the prompt term is bitwise
    # identical while the pairwise similarity swings from tight to antipodal
    k = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)

    def on_cone(phi, c=0.4):
        s = math.sqrt(1.0 - c * c)
        return torch.tensor([c, s * math.cos(phi), s * math.sin(phi)], dtype=torch.float64)

    tight = torch.stack([on_cone(0.0), on_cone(0.01)])
    spread = torch.stack([on_cone(0.0), on_cone(math.pi)])
    assert mean_pairwise_cosine(tight) > 0.9 > -0.5 > mean_pairwise_cosine(spread)
    assert float(great_circle_loss(tight, k)) == float(great_circle_loss(spread, k))


def test_loss_gradients_match_finite_differences():
    k = normalize(randn_tensor(2, (8,)))
    x = randn_tensor(3, (4, 8))
    assert gradient_error(lambda v: great_circle_loss(normalize(v), k), x) < 1e-6
    for tau in (1.0, 0.01):
        err = gradient_error(lambda v: infonce_loss(normalize(v), k, temperature=tau), x)
        assert err < 1e-6


def test_loss_config_validation_and_dispatch():
    LossConfig().validate()
    with pytest.raises(ConfigError):
        LossConfig(kind="triplet").validate()
    with pytest.raises(ConfigError):
        LossConfig(kind="infonce", temperature=0.0).validate()

    q = normalize(randn_tensor(4, (3, 8)))
    k = normalize(randn_tensor(5, (8,)))
    gc = loss_fn(LossConfig(kind="great_circle"))
    assert_allclose(float(gc(q, k)), float(great_circle_loss(q, k)), rtol=0)
    nce = loss_fn(LossConfig(kind="infonce", temperature=0.7))
    assert_allclose(float(nce(q, k)), float(infonce_loss(q, k, temperature=0.7)), rtol=0)


# --- mean pairwise cosine --------------------------------------------------------


def test_mean_pairwise_cosine_known_values():
    pair = torch.stack([unit(1.0, 0.0), unit(0.5, math.sqrt(3.0) / 2.0)])
    assert_allclose(mean_pairwise_cosine(pair), 0.5, rtol=1e-12)
    assert math.isnan(mean_pairwise_cosine(pair[:1]))


# --- toy embedder ----------------------------------------------------------------


def test_toy_embedder_outputs_are_unit_norm():
    emb = ToyEmbedder(seed=0, dim=32)
    images = rand_tensor(0, (4, 3, 16, 16))
    vectors = emb.embed_images(images)
    assert vectors.shape == (4, 32)
    assert_allclose(vectors.detach().norm(dim=1).numpy(), np.ones(4), rtol=0, atol=1e-6)
    text = emb.embed_text("a red butterfly")
    assert_allclose(float(text.norm()), 1.0, rtol=0, atol=1e-6)


def test_toy_embedder_is_deterministic_across_instances():
    images = rand_tensor(1, (2, 3, 16, 16))
    a = ToyEmbedder(seed=7, dim=16)
    b = ToyEmbedder(seed=7, dim=16)
    assert torch.equal(a.embed_images(images), b.embed_images(images))
    assert torch.equal(a.embed_text("same prompt"), b.embed_text("same prompt"))
    c = ToyEmbedder(seed=8, dim=16)
    assert not torch.equal(a.embed_text("same prompt"), c.embed_text("same prompt"))


def test_distinct_prompts_separate():
    emb = ToyEmbedder(seed=0, dim=32)
    a = emb.embed_text("a psychedelic butterfly")
    b = emb.embed_text("a monochrome moth")
    assert float(a @ b) < 1.0 - 1e-6


def test_toy_embedder_pools_any_spatial_size():
    emb = ToyEmbedder(seed=0, dim=8)
    for h, w in [(8, 8), (16, 16), (32, 8)]:
        assert emb.embed_images(rand_tensor(2, (1, 3, h, w))).shape == (1, 8)


def test_toy_embedder_image_gradients():
    emb = ToyEmbedder(seed=0, dim=8)
    k = emb.embed_text("target").detach()

    def fn(images):
        return (emb.embed_images(images) @ k).sum()

    assert gradient_error(fn, rand_tensor(3, (2, 3, 8, 8))) < 1e-6


def test_toy_embedder_validation():
    with pytest.raises(ConfigError):
        ToyEmbedder(seed=0, dim=1)
    emb = ToyEmbedder(seed=0, dim=8)
    with pytest.raises(ShapeError):
        emb.embed_images(rand_tensor(4, (2, 1, 8, 8)))
    with pytest.raises(DegenerateEmbeddingError):
        emb.embed_text("")


# --- adapter slot ----------------------------------------------------------------


def test_embedder_adapter_registry(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_external_embedder(tmp_path / "absent.bin", "whatever")
    target = tmp_path / "weights.bin"
    target.write_bytes(b"\x00")
    with pytest.raises(UnknownAdapterError):
        load_external_embedder(target, "not-registered")

    register_embedder_adapter("test-dummy", lambda path: ToyEmbedder(seed=1, dim=4))
    emb = load_external_embedder(target, "test-dummy")
    assert emb.dim == 4
