import math

import numpy as np
import pytest
import torch
from torch import nn

from plfm.cgan import (CGANConfig, DiscriminatorConfig, GeneratorConfig, PatchDiscriminator,
                       UNetGenerator, cgan_losses, default_depth, discriminator_forward,
                       generator_forward, generator_l1, optical_to_input, output_to_unit,
                       receptive_field, sar_to_input, simulate_training_pairs,
                       single_discriminator_objective, train_cgan)
from plfm.data_model import SARImage, ShapeError


class Half(nn.Module):
    """Discriminator stub that always answers 0.5."""

    def forward(self, x, z):
        return torch.full((x.shape[0], 1, 2, 2), 0.5)


def _batch(b=2, s=16):
    torch.manual_seed(0)
    x = torch.rand(b, 1, s, s) * 2 - 1
    z = torch.rand(b, 3, s, s) * 2 - 1
    return x, x.clone(), z


def test_discriminator_losses_at_half_are_log4():
    x_real, x_sim, z = _batch()
    G = UNetGenerator(GeneratorConfig(base_filters=4), 16)
    bundle = cgan_losses(x_real, x_sim, z, G, Half(), Half())
    assert bundle.d1_loss.item() == pytest.approx(math.log(4), rel=1e-6)
    assert bundle.d2_loss.item() == pytest.approx(math.log(4), rel=1e-6)
    assert bundle.g_adv_loss.item() == pytest.approx(math.log(2), rel=1e-6)
    assert bundle.g_total.item() == pytest.approx(math.log(2) + 100 * bundle.g_l1_loss.item(), rel=1e-6)


def test_l1_is_zero_for_perfect_generator():
    x_real, x_sim, z = _batch()

    class Oracle(nn.Module):
        def forward(self, x):
            return z

    bundle = cgan_losses(x_real, x_sim, z, Oracle(), Half(), Half())
    assert bundle.g_l1_loss.item() == 0.0


def test_gammas_must_sum_to_one():
    x_real, x_sim, z = _batch()
    G = UNetGenerator(GeneratorConfig(base_filters=4), 16)
    with pytest.raises(ValueError):
        cgan_losses(x_real, x_sim, z, G, Half(), Half(), DiscriminatorConfig(gammas=(0.5, 0.6)))


def test_one_sided_gamma_drops_other_discriminator():
    x_real, x_sim, z = _batch()
    G = UNetGenerator(GeneratorConfig(base_filters=4), 16)

    class Zero(nn.Module):
        def forward(self, x, zz):
            return torch.full((x.shape[0], 1, 2, 2), 1e-6)

    b = cgan_losses(x_real, x_sim, z, G, Half(), Zero(), DiscriminatorConfig(gammas=(1.0, 0.0)))
    assert b.g_adv_loss.item() == pytest.approx(math.log(2), rel=1e-6)


def test_single_discriminator_objective():
    x, _, z = _batch()
    G = UNetGenerator(GeneratorConfig(base_filters=4), 16)
    G.eval()
    v = single_discriminator_objective(x, z, G, Half(), lam=10.0).item()
    assert v == pytest.approx(math.log(2) + 10 * (z - G(x)).abs().mean().item(), rel=1e-5)


def test_patch_receptive_field_defaults():
    assert receptive_field([(4, 2), (4, 2), (4, 2), (4, 1), (4, 1)]) == 70
    d = PatchDiscriminator(size=256)
    assert d.receptive_field >= 70
    assert d(torch.zeros(1, 1, 256, 256), torch.zeros(1, 3, 256, 256)).shape == (1, 1, 32, 32)
    small = PatchDiscriminator(DiscriminatorConfig(base_filters=4), size=32)
    assert small.receptive_field >= 16
    with pytest.raises(ShapeError):
        small(torch.zeros(1, 1, 32, 32), torch.zeros(1, 3, 16, 16))


def test_generator_shapes():
    assert default_depth(256) == 5 and default_depth(32) == 4
    G = UNetGenerator(GeneratorConfig(base_filters=4), 32)
    out = G(torch.zeros(2, 1, 32, 32))
    assert out.shape == (2, 3, 32, 32) and out.abs().max() <= 1
    with pytest.raises(ShapeError):
        G(torch.zeros(1, 1, 24, 24))


def test_generator_forward_modes():
    torch.manual_seed(1)
    G = UNetGenerator(GeneratorConfig(base_filters=4), 16)
    sar = SARImage(np.random.default_rng(0).gamma(1.0, 1.0, (16, 16, 1)))
    a = generator_forward(sar, G).values
    b = generator_forward(sar, G).values
    assert np.array_equal(a, b) and a.min() >= 0 and a.max() <= 1
    c = generator_forward(sar, G, train_mode=True).values
    assert not np.array_equal(a, c)
    # batch-norm statistics untouched by a noisy pass
    assert np.array_equal(generator_forward(sar, G).values, a)


def test_range_conversions():
    t = sar_to_input(np.array([[[0.0], [1.0], [5.0]]]), clip=2.0)
    assert t.flatten().tolist() == [-1.0, 0.0, 1.0]
    z = np.random.default_rng(2).uniform(0, 1, (4, 4, 3))
    assert np.allclose(output_to_unit(optical_to_input(z))[0], z, atol=1e-6)


def test_simulated_pairs_are_reproducible():
    gt = np.random.default_rng(3).uniform(0, 1, (2, 8, 8, 3))
    a = simulate_training_pairs(gt, seed=5)
    b = simulate_training_pairs(gt, seed=5)
    assert a.shape == (2, 8, 8, 1) and np.array_equal(a, b)
    assert not np.array_equal(a[0], a[1])
    single = simulate_training_pairs(gt[0], seed=5)
    assert isinstance(single, SARImage)


def test_discriminator_forward_grid():
    D = PatchDiscriminator(DiscriminatorConfig(base_filters=4), size=16)
    p = discriminator_forward(np.ones((16, 16, 1)), np.ones((16, 16, 3)) * 0.5, D)
    assert p.ndim == 2 and np.all((p > 0) & (p < 1))


def test_training_smoke():
    rng = np.random.default_rng(4)
    data = [(rng.gamma(1, 1, (16, 16, 1)), rng.uniform(0, 1, (16, 16, 3))) for _ in range(4)]
    cfg = CGANConfig(size=16, generator=GeneratorConfig(base_filters=4),
                     discriminator=DiscriminatorConfig(base_filters=4), steps=5, batch_size=2)
    G, D1, D2, hist = train_cgan(data, cfg)
    assert len(hist) == 5 and set(hist[0]) == {"step", "d1_loss", "d2_loss", "g_adv_loss",
                                               "g_l1_loss", "g_total"}
    _, _, _, again = train_cgan(data, cfg)
    assert again[0]["g_total"] == pytest.approx(hist[0]["g_total"], abs=1e-6)
    assert 0 <= generator_l1(G, data) <= 1
    with pytest.raises(ValueError):
        train_cgan([], cfg)


def test_lambda_only_training_reduces_l1():
    rng = np.random.default_rng(5)
    data = [(rng.gamma(1, 1, (16, 16, 1)), rng.uniform(0, 1, (16, 16, 3))) for _ in range(4)]
    cfg = CGANConfig(size=16, generator=GeneratorConfig(base_filters=8),
                     discriminator=DiscriminatorConfig(base_filters=4), steps=150, batch_size=4,
                     adv_weight=0.0)
    _, _, _, hist = train_cgan(data, cfg)
    blocks = [np.mean([r["g_l1_loss"] for r in hist[s:s + 50]]) for s in (0, 50, 100)]
    assert blocks[0] > blocks[1] > blocks[2]
