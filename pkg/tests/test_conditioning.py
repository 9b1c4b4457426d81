import numpy as np
import pytest
import torch

from scenediff.conditioning import (
    PAD_LABEL,
    ConditioningBuilder,
    ExternalEmbeddingProvider,
    StubEmbeddingProvider,
    null_conditioning,
    stack_signals,
)
from scenediff.errors import DataError


@pytest.fixture
def provider():
    return StubEmbeddingProvider(text_dim=24, image_dim=16, seed=0)


def test_embed_text_deterministic(provider):
    a, b = provider.embed_text("dog"), provider.embed_text("dog")
    assert torch.equal(a, b)
    assert a.shape == (24,)


def test_embed_text_distinct_over_toy_vocab(provider, toy_vocab):
    labels = list(toy_vocab.object_labels) + [PAD_LABEL]
    vecs = [provider.embed_text(l) for l in labels]
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            assert not torch.allclose(vecs[i], vecs[j])


def test_embed_text_unit_norm(provider):
    for label in ("dog", "cat", PAD_LABEL):
        assert float(provider.embed_text(label).norm()) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(DataError):
        provider.embed_text("")


def test_embed_image_deterministic(provider):
    img = np.random.default_rng(0).uniform(size=(32, 32, 3)).astype(np.float32)
    assert torch.equal(provider.embed_image(img), provider.embed_image(img.copy()))


def test_embed_image_distinct_and_normed(provider):
    zeros = np.zeros((16, 16, 3), dtype=np.float32)
    ones = np.ones((16, 16, 3), dtype=np.float32)
    a, b = provider.embed_image(zeros), provider.embed_image(ones)
    assert not torch.allclose(a, b)
    for v in (a, b):
        assert float(v.norm()) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(DataError):
        provider.embed_image(ones * 3.0)


def test_build_conditioning_shapes_and_mask(provider):
    builder = ConditioningBuilder(d_global=8, provider=provider, n_max=10, d_cond=12, seed=1)
    sig = builder(torch.randn(8), ["red square", "blue circle", "green square"])
    assert sig.tokens.shape == (11, 12)
    assert sig.mask.tolist() == [True] * 4 + [False] * 7


def test_build_conditioning_full_capacity(provider):
    builder = ConditioningBuilder(d_global=8, provider=provider, n_max=3, d_cond=12, seed=1)
    sig = builder(torch.randn(8), ["a", "b", "c"])
    assert sig.mask.all()
    with pytest.raises(DataError, match="capacity"):
        builder(torch.randn(8), ["a", "b", "c", "d"])
    with pytest.raises(DataError):
        builder(torch.randn(8), [])


def test_build_conditioning_deterministic(provider):
    builder = ConditioningBuilder(d_global=8, provider=provider, n_max=4, d_cond=12, seed=2)
    g = torch.randn(8)
    s1, s2 = builder(g, ["a", "b"]), builder(g, ["a", "b"])
    assert torch.equal(s1.tokens, s2.tokens)
    assert torch.equal(s1.mask, s2.mask)


def test_token0_linearity(provider):
    builder = ConditioningBuilder(d_global=8, provider=provider, n_max=4, d_cond=12, seed=3)
    with torch.no_grad():
        builder.graph_proj.bias.zero_()
    g = torch.randn(8)
    t1 = builder(g, ["a"]).tokens[0]
    t2 = builder(2.0 * g, ["a"]).tokens[0]
    assert torch.allclose(t2, 2.0 * t1, atol=1e-6)


def test_label_tokens_preserve_order_without_projection():
    provider = StubEmbeddingProvider(text_dim=12, image_dim=16, seed=0)
    builder = ConditioningBuilder(d_global=8, provider=provider, n_max=4, d_cond=12, seed=4)
    assert builder.label_proj is None  # text_dim == d_cond
    labels = ["red square", "blue circle"]
    sig = builder(torch.randn(8), labels)
    for i, label in enumerate(labels):
        assert torch.equal(sig.tokens[1 + i], provider.embed_text(label))
    assert torch.equal(sig.tokens[3], provider.embed_text(PAD_LABEL))


def test_null_conditioning_and_stacking():
    sig = null_conditioning(4, 6)
    assert sig.tokens.shape == (5, 6)
    assert sig.mask.tolist() == [True, False, False, False, False]
    tokens, mask = stack_signals([sig, sig])
    assert tokens.shape == (2, 5, 6) and mask.shape == (2, 5)


class _FakeResponse:
    def __init__(self, vector):
        self._vector = vector

    def raise_for_status(self):
        pass

    def json(self):
        return {"vector": self._vector}


class _FakeSession:
    def __init__(self, dim, fail_times=0):
        self.dim = dim
        self.fail_times = fail_times
        self.calls = []

    def post(self, url, json=None, timeout=None):
        self.calls.append({"url": url, "json": json, "timeout": timeout})
        if self.fail_times > 0:
            self.fail_times -= 1
            raise ConnectionError("boom")
        return _FakeResponse([1.0] * self.dim)


def test_external_provider_request_shape():
    session = _FakeSession(dim=8)
    provider = ExternalEmbeddingProvider(
        "http://embed.local/v1", text_dim=8, image_dim=8, session=session
    )
    vec = provider.embed_text("dog")
    assert float(vec.norm()) == pytest.approx(1.0, abs=1e-6)
    assert session.calls[0]["json"] == {"kind": "text", "payload": "dog"}
    provider.embed_image(np.zeros((4, 4, 3)))
    assert session.calls[1]["json"]["kind"] == "image"


def test_external_provider_retries_then_surfaces():
    session = _FakeSession(dim=8, fail_times=1)
    provider = ExternalEmbeddingProvider(
        "http://embed.local/v1", text_dim=8, image_dim=8, retries=2, session=session
    )
    assert provider.embed_text("dog").shape == (8,)  # one retry suffices
    session = _FakeSession(dim=8, fail_times=10)
    provider = ExternalEmbeddingProvider(
        "http://embed.local/v1", text_dim=8, image_dim=8, retries=2, session=session
    )
    with pytest.raises(RuntimeError, match="after 3 attempts"):
        provider.embed_text("dog")


def test_external_provider_dim_mismatch_is_fatal():
    session = _FakeSession(dim=5)
    provider = ExternalEmbeddingProvider(
        "http://embed.local/v1", text_dim=8, image_dim=8, session=session
    )
    with pytest.raises(DataError):
        provider.embed_text("dog")
    assert len(session.calls) == 1  # no retry on contract violations
