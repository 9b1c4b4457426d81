import copy
import math

import pytest
import torch

from scenediff.conditioning import StubEmbeddingProvider
from scenediff.encoder import GraphEncoder
from scenediff.errors import DataError
from scenediff.gca import (
    Discriminator,
    GcaTrainConfig,
    clamp_probs,
    discriminator_forward,
    discriminator_loss,
    generator_loss,
    train_gca,
)
from scenediff.scenegraph import SceneGraph

from gradcheck import grad_rel_err


def zeroed_discriminator(in_dim=6):
    disc = Discriminator(in_dim=in_dim)
    with torch.no_grad():
        for p in disc.parameters():
            p.zero_()
    return disc


def test_zero_weights_give_half():
    disc = zeroed_discriminator()
    for _ in range(3):
        p = discriminator_forward(torch.randn(6), disc, mode="train", seed=1)
        assert float(p) == 0.5


def test_eval_mode_deterministic():
    torch.manual_seed(0)
    disc = Discriminator(in_dim=6)
    v = torch.randn(6)
    a = discriminator_forward(v, disc, mode="eval", seed=1)
    b = discriminator_forward(v, disc, mode="eval", seed=99)  # seed irrelevant in eval
    assert torch.equal(a, b)
    assert 0.0 < float(a) < 1.0


def test_train_mode_seeded_dropout():
    torch.manual_seed(0)
    disc = Discriminator(in_dim=6)
    v = torch.randn(4, 6)
    a = discriminator_forward(v, disc, mode="train", seed=7)
    b = discriminator_forward(v, disc, mode="train", seed=7)
    c = discriminator_forward(v, disc, mode="train", seed=8)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_dimension_mismatch():
    disc = Discriminator(in_dim=6)
    with pytest.raises(DataError):
        disc(torch.randn(5))
    with pytest.raises(DataError):
        discriminator_forward(torch.randn(5), disc, mode="nope", seed=0)


def test_generator_loss_values():
    assert float(generator_loss(torch.tensor([0.5, 0.5], dtype=torch.float64))) == pytest.approx(
        math.log(2), abs=1e-12
    )
    assert float(generator_loss(torch.tensor([1 - 1e-9], dtype=torch.float64))) < 1e-8
    got = float(generator_loss(torch.tensor([0.5, 0.25], dtype=torch.float64)))
    assert got == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    with pytest.raises(DataError):
        generator_loss([1.0])
    with pytest.raises(DataError):
        generator_loss([])


def test_discriminator_loss_values():
    half = torch.tensor([0.5], dtype=torch.float64)
    assert float(discriminator_loss(half, half)) == pytest.approx(2 * math.log(2), abs=1e-12)
    near = float(
        discriminator_loss(
            torch.tensor([1 - 1e-9], dtype=torch.float64),
            torch.tensor([1e-9], dtype=torch.float64),
        )
    )
    assert near < 1e-8
    got = float(
        discriminator_loss(
            torch.tensor([0.9], dtype=torch.float64), torch.tensor([0.1], dtype=torch.float64)
        )
    )
    assert got == pytest.approx(-2 * math.log(0.9), abs=1e-12)
    with pytest.raises(DataError):
        discriminator_loss([0.5], [0.0])


def test_zero_init_loss_identities():
    disc = zeroed_discriminator()
    v = torch.randn(4, 6, dtype=torch.float64)
    probs = disc(v.float(), train=False).double()
    assert float(generator_loss(probs)) == pytest.approx(math.log(2), abs=1e-12)
    assert float(discriminator_loss(probs, probs)) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_clamp_probs():
    p = clamp_probs(torch.tensor([0.0, 0.5, 1.0]))
    assert p.min() > 0.0 and p.max() < 1.0


def test_gan_loss_gradients_match_finite_differences():
    torch.manual_seed(3)
    disc = Discriminator(in_dim=6, dropout=0.0).double()
    encoder = GraphEncoder(5, 3, d_obj=5, d_rel=5, hidden=4, d_global=6, n_layers=1, seed=4).double()
    graphs = [SceneGraph([0, 1], [(0, 0, 1)]), SceneGraph([2, 3, 4], [(0, 1, 1), (1, 2, 2)])]
    real = torch.randn(2, 6, dtype=torch.float64)

    def disc_loss():
        fake = torch.stack([encoder(g) for g in graphs])
        return discriminator_loss(
            clamp_probs(disc(real, train=True)), clamp_probs(disc(fake, train=True))
        )

    def gen_loss():
        fake = torch.stack([encoder(g) for g in graphs])
        return generator_loss(clamp_probs(disc(fake, train=True)))

    params = list(disc.parameters()) + list(encoder.parameters())
    assert grad_rel_err(disc_loss, params, max_coords_per_tensor=40) < 1e-4
    assert grad_rel_err(gen_loss, params, max_coords_per_tensor=40) < 1e-4


def _tiny_setup(toy_pairs, d=8, seed=0):
    vocab_n = 8
    encoder = GraphEncoder(vocab_n, 6, d_obj=d, d_rel=d, hidden=d, d_global=d, n_layers=1, seed=seed)
    disc = Discriminator(in_dim=d)
    provider = StubEmbeddingProvider(text_dim=d, image_dim=d, seed=seed)
    return encoder, disc, provider


def test_train_gca_zero_gen_steps_freezes_encoder(toy_pairs):
    encoder, disc, provider = _tiny_setup(toy_pairs)
    before = copy.deepcopy(encoder.state_dict())
    cfg = GcaTrainConfig(epochs=2, batch_size=4, gen_steps=0, seed=0)
    history = train_gca(toy_pairs, encoder, disc, provider, cfg)
    after = encoder.state_dict()
    for key in before:
        assert torch.equal(before[key], after[key])
    assert len(history) == 3  # epoch 0 + 2 epochs
    assert history[1]["gen_loss"] is None


def test_train_gca_deterministic(toy_pairs):
    results = []
    for _ in range(2):
        encoder, disc, provider = _tiny_setup(toy_pairs, seed=5)
        cfg = GcaTrainConfig(epochs=2, batch_size=4, seed=11)
        history = train_gca(toy_pairs, encoder, disc, provider, cfg)
        results.append((history, encoder.state_dict(), disc.state_dict()))
    (h1, e1, d1), (h2, e2, d2) = results
    assert h1 == h2
    for key in e1:
        assert torch.equal(e1[key], e2[key])
    for key in d1:
        assert torch.equal(d1[key], d2[key])


def test_train_gca_width_mismatch(toy_pairs):
    encoder, _, provider = _tiny_setup(toy_pairs)
    disc = Discriminator(in_dim=12)
    with pytest.raises(DataError):
        train_gca(toy_pairs, encoder, disc, provider, GcaTrainConfig(epochs=1))


def test_train_gca_history_shape(toy_pairs):
    encoder, disc, provider = _tiny_setup(toy_pairs, seed=2)
    cfg = GcaTrainConfig(epochs=3, batch_size=4, seed=1)
    history = train_gca(toy_pairs, encoder, disc, provider, cfg)
    assert [h["epoch"] for h in history] == [0, 1, 2, 3]
    assert history[0]["disc_loss"] is None
    for rec in history[1:]:
        assert rec["disc_loss"] > 0 and rec["gen_loss"] > 0
    assert all(rec["val_mmd2"] is not None for rec in history)
