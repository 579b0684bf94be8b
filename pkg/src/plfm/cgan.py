"""SAR-to-optical branch: U-Net generator and two PatchGAN discriminators.

D1 judges pairs built from simulated SAR (speckled ground truth), D2 pairs
built from real SAR. The generator objective is the gamma-weighted sum of the
two adversarial terms plus ``lam`` times the L1 distance to ground truth.
Networks work in the symmetric range [-1, 1]; public helpers convert from and
to the canonical unit range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data_model import OpticalImage, SARImage, ShapeError, grayscale
from .dataset.synth import simulate_sar


@dataclass
class GeneratorConfig:
    in_channels: int = 1
    out_channels: int = 3
    depth: int | None = None        # None: 5 at 256 px, fewer for small images
    base_filters: int = 64
    max_filters: int = 512
    dropout: float = 0.5
    skip: bool = True
    sar_clip: float = 2.0


@dataclass
class DiscriminatorConfig:
    patch_size: int | None = None   # receptive-field target; None: min(70, size // 2)
    n_strided: int | None = None
    base_filters: int = 64
    gammas: tuple = (0.5, 0.5)
    lam: float = 100.0


@dataclass
class CGANConfig:
    size: int = 256
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    lr: float = 2e-4
    beta1: float = 0.5
    batch_size: int = 32
    steps: int = 1000
    adv_weight: float = 1.0
    looks: int = 1
    seed: int = 0


def default_depth(size: int) -> int:
    return int(max(1, min(5, math.log2(size) - 1)))


def default_strided(size: int) -> int:
    return int(max(1, min(3, math.log2(size) - 3)))


# ---------------------------------------------------------------- networks

class UNetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig | None = None, size: int = 256):
        super().__init__()
        self.cfg = cfg = cfg or GeneratorConfig()
        self.size = size
        self.depth = cfg.depth or default_depth(size)
        filters = [min(cfg.base_filters * 2 ** k, cfg.max_filters) for k in range(self.depth)]
        self.down = nn.ModuleList()
        prev = cfg.in_channels
        for k, f in enumerate(filters):
            layers = [nn.Conv2d(prev, f, 4, 2, 1, bias=False)]
            if 0 < k < self.depth - 1:
                layers.append(nn.BatchNorm2d(f))
            layers.append(nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*layers))
            prev = f
        self.up = nn.ModuleList()
        n_drop = min(3, self.depth - 1)
        for j, k in enumerate(range(self.depth - 2, -1, -1)):
            out = filters[k]
            layers = [nn.ConvTranspose2d(prev, out, 4, 2, 1, bias=False), nn.BatchNorm2d(out)]
            if j < n_drop and cfg.dropout > 0:
                layers.append(nn.Dropout(cfg.dropout))
            layers.append(nn.ReLU())
            self.up.append(nn.Sequential(*layers))
            prev = out * 2 if cfg.skip else out
        self.out = nn.ConvTranspose2d(prev, cfg.out_channels, 4, 2, 1)

    def forward(self, x):
        step = 2 ** self.depth
        if x.shape[-1] % step or x.shape[-2] % step:
            raise ShapeError(f"spatial size {tuple(x.shape[-2:])} not divisible by 2^{self.depth}")
        skips = []
        for layer in self.down:
            x = layer(x)
            skips.append(x)
        for layer, skip in zip(self.up, reversed(skips[:-1])):
            x = layer(x)
            if self.cfg.skip:
                x = torch.cat([x, skip], dim=1)
        return torch.tanh(self.out(x))


def receptive_field(layers) -> int:
    """Receptive field of one output unit for a stack of ``(kernel, stride)``."""
    rf, jump = 1, 1
    for k, s in layers:
        rf += (k - 1) * jump
        jump *= s
    return rf


class PatchDiscriminator(nn.Module):
    """Conditional PatchGAN on the channel concatenation of (SAR, optical).

    ``n_strided`` 4x4/stride-2 convolutions followed by 3x3/stride-1 layers
    until the receptive field reaches ``patch_size``; the output grid is the
    input size divided by ``2**n_strided``.
    """

    def __init__(self, cfg: DiscriminatorConfig | None = None, size: int = 256, in_channels: int = 4):
        super().__init__()
        self.cfg = cfg = cfg or DiscriminatorConfig()
        self.n_strided = cfg.n_strided or default_strided(size)
        self.patch_size = cfg.patch_size or min(70, size // 2)
        spec = [(4, 2)] * self.n_strided + [(3, 1)]
        while receptive_field(spec) < self.patch_size:
            spec.insert(-1, (3, 1))
        self.layer_spec = spec
        layers, prev = [], in_channels
        for n, (k, s) in enumerate(spec[:-1]):
            f = min(cfg.base_filters * 2 ** min(n, 3), 512)
            layers.append(nn.Conv2d(prev, f, k, s, (k - 1) // 2 if s == 1 else 1, bias=n == 0))
            if n > 0:
                layers.append(nn.BatchNorm2d(f))
            layers.append(nn.LeakyReLU(0.2))
            prev = f
        layers.append(nn.Conv2d(prev, 1, 3, 1, 1))
        self.net = nn.Sequential(*layers)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.layer_spec)

    def forward(self, sar, optical):
        if sar.shape[-2:] != optical.shape[-2:] or sar.shape[0] != optical.shape[0]:
            raise ShapeError(f"SAR {tuple(sar.shape)} and optical {tuple(optical.shape)} do not match")
        return torch.sigmoid(self.net(torch.cat([sar, optical], dim=1)))


# ---------------------------------------------------------------- conversions

def sar_to_input(values, clip: float = 2.0) -> torch.Tensor:
    """``(B, H, W, 1)`` or ``(H, W, 1)`` backscatter -> ``(B, 1, H, W)`` in [-1, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    arr = np.clip(arr, 0.0, clip) / clip * 2.0 - 1.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float()


def optical_to_input(values) -> torch.Tensor:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2) * 2.0 - 1.0)).float()


def output_to_unit(t: torch.Tensor) -> np.ndarray:
    return ((t.detach().double().numpy().transpose(0, 2, 3, 1) + 1.0) / 2.0).clip(0.0, 1.0)


def generator_forward(x, model: UNetGenerator, train_mode: bool = False) -> OpticalImage:
    """Translate one SAR image to an optical image in unit range.

    ``train_mode`` keeps dropout (the noise input) active; eval mode is deterministic.
    """
    vals = x.values if isinstance(x, SARImage) else x
    model.eval()
    if train_mode:
        # noise only: batch-norm statistics stay frozen
        for m in model.modules():
            if isinstance(m, nn.Dropout):
                m.train()
    with torch.no_grad():
        out = model(sar_to_input(vals, model.cfg.sar_clip))
    model.eval()
    return OpticalImage(output_to_unit(out)[0], "unit")


def discriminator_forward(x, z, model: PatchDiscriminator, sar_clip: float = 2.0) -> np.ndarray:
    """Patch probability grid ``(H', W')`` for one (SAR, optical) pair."""
    sv = x.values if isinstance(x, SARImage) else x
    zv = z.values if isinstance(z, OpticalImage) else z
    model.eval()
    with torch.no_grad():
        p = model(sar_to_input(sv, sar_clip), optical_to_input(zv))
    return p[0, 0].double().numpy()


def simulate_training_pairs(optical_gt, seed=None, looks: int = 1):
    """Speckled grey-level copies of ground-truth optical images.

    A single ``(H, W, 3)`` image gives a SARImage; a ``(B, H, W, 3)`` batch
    gives a ``(B, H, W, 1)`` array with one derived seed per image.
    """
    arr = np.asarray(getattr(optical_gt, "values", optical_gt), dtype=np.float64)
    if arr.ndim == 3:
        return simulate_sar(grayscale(arr), looks, seed)
    seeds = np.random.SeedSequence(seed).spawn(len(arr))
    return np.stack([simulate_sar(grayscale(a), looks, np.random.default_rng(s)).values
                     for a, s in zip(arr, seeds)])


# ---------------------------------------------------------------- objective

@dataclass
class LossBundle:
    d1_loss: torch.Tensor
    d2_loss: torch.Tensor
    g_adv_loss: torch.Tensor
    g_l1_loss: torch.Tensor
    g_total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("d1_loss", "d2_loss", "g_adv_loss", "g_l1_loss", "g_total")}


def _bce(p, target: float):
    return F.binary_cross_entropy(p, torch.full_like(p, target))


def _check_gammas(gammas):
    if abs(sum(gammas) - 1.0) > 1e-9:
        raise ValueError(f"discriminator weights must sum to 1, got {gammas}")


def discriminator_losses(x_real, x_sim, z, fake_sim, fake_real, D1, D2):
    d1 = _bce(D1(x_sim, z), 1.0) + _bce(D1(x_sim, fake_sim.detach()), 0.0)
    d2 = _bce(D2(x_real, z), 1.0) + _bce(D2(x_real, fake_real.detach()), 0.0)
    return d1, d2


def generator_losses(x_real, x_sim, z, fake_sim, fake_real, D1, D2, cfg: DiscriminatorConfig,
                     adv_weight: float = 1.0):
    g1, g2 = cfg.gammas
    adv = g1 * _bce(D1(x_sim, fake_sim), 1.0) + g2 * _bce(D2(x_real, fake_real), 1.0)
    l1 = 0.5 * ((z - fake_sim).abs().mean() + (z - fake_real).abs().mean())
    return adv, l1, adv_weight * adv + cfg.lam * l1


def cgan_losses(x_real, x_sim, z, G, D1, D2, cfg: DiscriminatorConfig | None = None,
                adv_weight: float = 1.0, fakes=None) -> LossBundle:
    """Losses for one batch; all tensors ``(B, C, H, W)`` in [-1, 1].

    The discriminator losses see detached generator outputs, the generator
    terms do not. ``fakes`` lets a caller reuse ``(G(x_sim), G(x_real))``.
    """
    cfg = cfg or DiscriminatorConfig()
    _check_gammas(cfg.gammas)
    fake_sim, fake_real = fakes if fakes is not None else (G(x_sim), G(x_real))
    d1, d2 = discriminator_losses(x_real, x_sim, z, fake_sim, fake_real, D1, D2)
    adv, l1, total = generator_losses(x_real, x_sim, z, fake_sim, fake_real, D1, D2, cfg, adv_weight)
    return LossBundle(d1, d2, adv, l1, total)


def single_discriminator_objective(x, z, G, D, lam: float = 100.0):
    """Generator objective with one discriminator (adversarial + lam * L1)."""
    fake = G(x)
    return _bce(D(x, fake), 1.0) + lam * (z - fake).abs().mean()


# ---------------------------------------------------------------- training

def build_models(cfg: CGANConfig):
    G = UNetGenerator(cfg.generator, cfg.size)
    in_ch = cfg.generator.in_channels + cfg.generator.out_channels
    D1 = PatchDiscriminator(cfg.discriminator, cfg.size, in_ch)
    D2 = PatchDiscriminator(cfg.discriminator, cfg.size, in_ch)
    return G, D1, D2


def _pairs_to_arrays(dataset):
    sar = np.stack([np.asarray(getattr(s, "values", s), dtype=np.float64) for s, _ in dataset])
    opt = np.stack([np.asarray(getattr(o, "values", o), dtype=np.float64) for _, o in dataset])
    if sar.ndim == 3:
        sar = sar[..., None]
    return sar, opt


def train_cgan(dataset, cfg: CGANConfig | None = None, models=None, on_step=None,
               start_step: int = 0, optimizers=None):
    """Alternate D-steps and G-steps over ``[(sar, optical), ...]`` pairs.

    Simulated SAR for D1 is drawn fresh every step from the batch's ground
    truth. Returns ``(G, D1, D2, history)`` with one LossBundle row per step.
    """
    cfg = cfg or CGANConfig()
    if len(dataset) == 0:
        raise ValueError("empty training set")
    _check_gammas(cfg.discriminator.gammas)
    sar, opt = _pairs_to_arrays(dataset)
    if sar.shape[1] != cfg.size:
        cfg = CGANConfig(**{**cfg.__dict__, "size": sar.shape[1]})
    torch.manual_seed(cfg.seed)
    G, D1, D2 = models or build_models(cfg)
    betas = (cfg.beta1, 0.999)
    if optimizers is None:
        opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr, betas=betas)
        opt_d = torch.optim.Adam([*D1.parameters(), *D2.parameters()], lr=cfg.lr, betas=betas)
    else:
        opt_g, opt_d = optimizers
    x_real_all = sar_to_input(sar, cfg.generator.sar_clip)
    z_all = optical_to_input(opt)
    rng = np.random.default_rng([cfg.seed, start_step])
    history = []
    g_params = list(G.parameters())
    d_params = list(D1.parameters()) + list(D2.parameters())
    G.train(), D1.train(), D2.train()
    bs = min(cfg.batch_size, len(sar))
    for step in range(start_step, start_step + cfg.steps):
        idx = rng.choice(len(sar), size=bs, replace=False)
        sim = simulate_training_pairs(opt[idx], [cfg.seed, 7, step], cfg.looks)
        x_sim = sar_to_input(sim, cfg.generator.sar_clip)
        x_real, z = x_real_all[idx], z_all[idx]

        fake_sim, fake_real = G(x_sim), G(x_real)
        d1, d2 = discriminator_losses(x_real, x_sim, z, fake_sim, fake_real, D1, D2)
        opt_d.zero_grad()
        (d1 + d2).backward(inputs=d_params)
        opt_d.step()

        # generator step against the updated discriminators
        adv, l1, total = generator_losses(x_real, x_sim, z, fake_sim, fake_real, D1, D2,
                                          cfg.discriminator, cfg.adv_weight)
        opt_g.zero_grad()
        total.backward(inputs=g_params)
        opt_g.step()
        bundle = LossBundle(d1.detach(), d2.detach(), adv.detach(), l1.detach(), total.detach())

        row = {"step": step, **bundle.as_floats()}
        history.append(row)
        if on_step:
            on_step(row, (G, D1, D2), (opt_g, opt_d))
    G.eval(), D1.eval(), D2.eval()
    return G, D1, D2, history


def generator_l1(G: UNetGenerator, dataset) -> float:
    """Mean absolute error (unit range, eval mode) of G over ``[(sar, optical), ...]``."""
    sar, opt = _pairs_to_arrays(dataset)
    G.eval()
    with torch.no_grad():
        out = output_to_unit(G(sar_to_input(sar, G.cfg.sar_clip)))
    return float(np.abs(out - opt).mean())
