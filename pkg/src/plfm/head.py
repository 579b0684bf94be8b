"""Head branch: per-pixel intensity classification over merged feature maps.

The head sees one colour pair ``(Z_k, Y_k)`` at a time, predicts a
distribution over ``n_classes`` intensity classes per pixel and the final
image is rebuilt channel by channel from the per-pixel argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data_model import (ClassVolume, OpticalImage, ShapeError, TemporalSequence, channel_pair,
                         concat_embeddings, convert_range)

LOG_EPS = 1e-12


class IncompatibleModels(ValueError):
    def __init__(self, dimension, expected, got):
        super().__init__(f"incompatible {dimension}: expected {expected}, got {got}")
        self.dimension = dimension


@dataclass
class HeadConfig:
    n_classes: int = 256
    depth: int = 2
    filters: int = 32
    batch_size: int = 16
    lr: float = 2e-4
    epochs: int = 50
    shared: bool = True
    seed: int = 0


# ---------------------------------------------------------------- quantization

def quantize_targets(img, n_classes: int) -> np.ndarray:
    """Integer class grid ``floor(v * n_classes)`` clamped to ``n_classes - 1``."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if isinstance(img, OpticalImage):
        vals = convert_range(img.values, img.range_tag, "unit")
    else:
        vals = np.asarray(img, dtype=np.float64)
    cls = np.floor(vals * n_classes).astype(np.int64)
    return np.clip(cls, 0, n_classes - 1)


def dequantize(classes, n_classes: int) -> np.ndarray:
    return (np.asarray(classes, dtype=np.float64) + 0.5) / n_classes


# ---------------------------------------------------------------- network

def _block(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU())


class HeadNet(nn.Module):
    """Small U-Net mapping a 2-channel pair to ``n_classes`` logits per pixel.

    The raw pair is also fed to the 1x1 classifier so intensity survives the
    encoder untouched.
    """

    def __init__(self, n_classes=256, depth=2, filters=32, in_channels=2):
        super().__init__()
        self.n_classes = n_classes
        self.depth = depth
        widths = [filters * 2 ** k for k in range(depth + 1)]
        self.enc = nn.ModuleList([_block(in_channels, widths[0])] +
                                 [_block(widths[k - 1], widths[k]) for k in range(1, depth + 1)])
        self.upconv = nn.ModuleList([nn.ConvTranspose2d(widths[k], widths[k - 1], 2, 2)
                                     for k in range(depth, 0, -1)])
        self.dec = nn.ModuleList([_block(2 * widths[k - 1], widths[k - 1]) for k in range(depth, 0, -1)])
        self.classifier = nn.Sequential(nn.Conv2d(widths[0] + in_channels, 2 * widths[0], 1), nn.ReLU(),
                                        nn.Conv2d(2 * widths[0], n_classes, 1))
        last = self.classifier[-1]
        nn.init.normal_(last.weight, std=1e-3)
        nn.init.zeros_(last.bias)

    def forward(self, x):
        step = 2 ** self.depth
        if x.shape[-1] % step or x.shape[-2] % step:
            raise ShapeError(f"spatial size {tuple(x.shape[-2:])} not divisible by {step}")
        skips, h = [], x
        for k, block in enumerate(self.enc):
            if k:
                h = F.max_pool2d(h, 2)
            h = block(h)
            skips.append(h)
        for up, dec, skip in zip(self.upconv, self.dec, reversed(skips[:-1])):
            h = dec(torch.cat([up(h), skip], dim=1))
        return self.classifier(torch.cat([h, x], dim=1))


class PLFMHead(nn.Module):
    """One shared HeadNet for all three colour pairs, or one per pair."""

    def __init__(self, cfg: HeadConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or HeadConfig()
        n = 1 if cfg.shared else 3
        self.nets = nn.ModuleList([HeadNet(cfg.n_classes, cfg.depth, cfg.filters) for _ in range(n)])

    @property
    def n_classes(self):
        return self.cfg.n_classes

    def forward(self, x, k: int = 1):
        return self.nets[0 if self.cfg.shared else k - 1](x)


def _pair_tensor(pair) -> torch.Tensor:
    arr = np.asarray(pair, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float()


def softmax(logits, axis=-1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def head_logits(pair, model: PLFMHead, k: int = 1) -> np.ndarray:
    """Raw ``(H, W, C)`` scores for one colour pair."""
    if np.shape(pair)[-1] != 2:
        raise ShapeError(f"head input needs 2 channels, got {np.shape(pair)[-1]}")
    model.eval()
    with torch.no_grad():
        out = model(_pair_tensor(pair), k)
    return out[0].double().numpy().transpose(1, 2, 0)


def head_forward(pair, model: PLFMHead, k: int = 1) -> ClassVolume:
    """Softmax class distribution per pixel for an ``(H, W, 2)`` pair."""
    return ClassVolume(softmax(head_logits(pair, model, k)))


def cross_entropy(m: ClassVolume, targets) -> float:
    """Mean over pixels (and batch) of ``-log p[target]``, log clipped at 1e-12."""
    probs = m.probs if isinstance(m, ClassVolume) else np.asarray(m)
    t = np.asarray(targets)
    if probs.shape[:-1] != t.shape:
        raise ShapeError(f"targets {t.shape} do not match class volume {probs.shape[:-1]}")
    if t.size and (t.max() >= probs.shape[-1] or t.min() < 0):
        raise ValueError(f"target class outside 0..{probs.shape[-1] - 1}")
    p = np.take_along_axis(probs, t[..., None].astype(np.int64), axis=-1)[..., 0]
    return float(np.mean(-np.log(np.clip(p, LOG_EPS, None))))


def cross_entropy_from_logits(logits, targets) -> float:
    return cross_entropy(ClassVolume(softmax(logits)), targets)


def cross_entropy_grad(logits, targets) -> np.ndarray:
    """``(softmax(logits) - onehot) / n_pixels``, gradient of the averaged loss."""
    p = softmax(logits)
    t = np.asarray(targets, dtype=np.int64)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
    return (p - onehot) / t.size


def reconstruct_channel(m: ClassVolume) -> np.ndarray:
    """Per-pixel argmax (lowest class on ties), dequantized to unit range."""
    probs = m.probs if isinstance(m, ClassVolume) else np.asarray(m)
    return dequantize(np.argmax(probs, axis=-1), probs.shape[-1])


# ---------------------------------------------------------------- training

def head_examples(dataset, n_classes: int):
    """Expand ``[(Y_hat, Z_hat, gt), ...]`` into per-pair inputs, targets and pair index."""
    xs, ts, ks = [], [], []
    for y_hat, z_hat, gt in dataset:
        y_hat = y_hat if isinstance(y_hat, OpticalImage) else OpticalImage(y_hat)
        z_hat = z_hat if isinstance(z_hat, OpticalImage) else OpticalImage(z_hat)
        gt_vals = gt.values if isinstance(gt, OpticalImage) else np.asarray(gt, dtype=np.float64)
        if gt_vals.shape != y_hat.shape:
            raise ShapeError(f"ground truth {gt_vals.shape} vs embeddings {y_hat.shape}")
        fmap = concat_embeddings(z_hat, y_hat)
        cls = quantize_targets(gt_vals, n_classes)
        for k in (1, 2, 3):
            xs.append(channel_pair(fmap, k))
            ts.append(cls[:, :, k - 1])
            ks.append(k)
    x = _pair_tensor(np.stack(xs))
    t = torch.from_numpy(np.stack(ts))
    return x, t, torch.tensor(ks)


def _run_batches(model, x, t, ks, order, batch, opt=None):
    total, correct, count = 0.0, 0, 0
    groups = [None] if model.cfg.shared else [1, 2, 3]
    for s in range(0, len(order), batch):
        idx = order[s:s + batch]
        for k in groups:
            sel = idx if k is None else idx[ks[idx] == k]
            if len(sel) == 0:
                continue
            logits = model(x[sel], k or 1)
            loss = F.cross_entropy(logits, t[sel])
            if opt is not None:
                opt.zero_grad()
                loss.backward()
                opt.step()
            n = t[sel].numel()
            total += loss.item() * n
            correct += (logits.argmax(1) == t[sel]).sum().item()
            count += n
    return total / count, correct / count


def train_head(dataset, cfg: HeadConfig | None = None, model: PLFMHead | None = None,
               on_epoch=None, start_epoch: int = 0, optimizer_state=None):
    """Fit the head on ``[(Y_hat, Z_hat, ground truth), ...]`` triples.

    Each triple yields three training examples, one per colour pair. History
    rows carry the mean training loss and pixel accuracy of each epoch.
    """
    cfg = cfg or HeadConfig()
    if len(dataset) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    model = model or PLFMHead(cfg)
    x, t, ks = head_examples(dataset, cfg.n_classes)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        model.train()
        order = torch.randperm(len(x), generator=gen)
        loss, acc = _run_batches(model, x, t, ks, order, cfg.batch_size, opt)
        row = {"epoch": epoch, "loss": loss, "accuracy": acc}
        history.append(row)
        if on_epoch:
            on_epoch(row, model, opt)
    model.eval()
    return model, history


def pixel_accuracy(model: PLFMHead, dataset) -> float:
    x, t, ks = head_examples(dataset, model.n_classes)
    model.eval()
    with torch.no_grad():
        _, acc = _run_batches(model, x, t, ks, torch.arange(len(x)), 64)
    return acc


# ---------------------------------------------------------------- end to end

@dataclass
class PLFMModels:
    convlstm: nn.Module
    generator: nn.Module
    head: PLFMHead

    def dims(self) -> dict:
        h, w = self.convlstm.cfg.size
        return {"W": w, "H": h, "n": self.convlstm.cfg.n_frames, "classes": self.head.n_classes}

    def check(self, seq_shape=None, sar_shape=None):
        h, w = self.convlstm.cfg.size
        step = 2 ** self.generator.depth
        if h % step or w % step:
            raise IncompatibleModels("generator depth", f"size divisible by {step}", (h, w))
        hstep = 2 ** self.head.cfg.depth
        if h % hstep or w % hstep:
            raise IncompatibleModels("head depth", f"size divisible by {hstep}", (h, w))
        if seq_shape is not None:
            n, sh, sw = seq_shape[:3]
            if n != self.convlstm.cfg.n_frames:
                raise IncompatibleModels("n", self.convlstm.cfg.n_frames, n)
            if (sh, sw) != (h, w):
                raise IncompatibleModels("H,W", (h, w), (sh, sw))
        if sar_shape is not None and tuple(sar_shape[:2]) != (h, w):
            raise IncompatibleModels("SAR H,W", (h, w), tuple(sar_shape[:2]))


def plfm_infer(seq, sar, models: PLFMModels, return_intermediates: bool = False):
    """Cloud-free estimate from an optical sequence and the co-registered SAR frame."""
    from .cgan import generator_forward
    from .convlstm import convlstm_forward

    stack = seq.stack() if isinstance(seq, TemporalSequence) else np.asarray(seq)
    sar_vals = getattr(sar, "values", sar)
    models.check(stack.shape, np.shape(sar_vals))
    y_hat = convlstm_forward(seq, models.convlstm)
    z_hat = generator_forward(sar, models.generator, train_mode=False)
    fmap = concat_embeddings(z_hat, y_hat)
    channels = [reconstruct_channel(head_forward(channel_pair(fmap, k), models.head, k)) for k in (1, 2, 3)]
    out = OpticalImage(np.stack(channels, axis=-1), "unit")
    if return_intermediates:
        return out, y_hat, z_hat
    return out


def expected_initial_loss(n_classes: int) -> float:
    return math.log(n_classes)
