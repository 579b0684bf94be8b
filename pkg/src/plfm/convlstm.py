"""Optical-to-optical temporal branch: stacked peephole ConvLSTM + Huber loss."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data_model import OpticalImage, ShapeError, TemporalSequence, convert_range

GATES = ("f", "c", "i", "o")
PEEP_GATES = ("f", "i", "o")


@dataclass
class HuberConfig:
    delta: float = 1.0
    batch_size: int = 16


@dataclass
class ConvLSTMConfig:
    size: tuple = (32, 32)
    in_channels: int = 3
    out_channels: int = 3
    hidden: tuple = (32, 32, 32)
    kernel_size: int = 3
    n_frames: int = 3
    peephole: bool = True
    shared_peephole: bool = False
    pool: bool = False


@dataclass
class TrainConfig:
    lr: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 100
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stop_patience: int = 10
    huber: HuberConfig = field(default_factory=HuberConfig)
    seed: int = 0


# ---------------------------------------------------------------- losses

def huber_loss(y_hat, y, cfg: HuberConfig | None = None) -> float:
    """Mean Huber loss over all elements (and the batch)."""
    delta = (cfg or HuberConfig()).delta
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    y_hat, y = np.asarray(y_hat, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    e = np.abs(y_hat - y)
    per = np.where(e <= delta, 0.5 * e * e, delta * e - 0.5 * delta * delta)
    return float(per.mean())


def huber_grad(y_hat, y, cfg: HuberConfig | None = None) -> np.ndarray:
    """Gradient of :func:`huber_loss` with respect to ``y_hat``."""
    delta = (cfg or HuberConfig()).delta
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    y_hat, y = np.asarray(y_hat, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    e = y_hat - y
    g = np.where(np.abs(e) <= delta, e, delta * np.sign(e))
    return g / max(e.size, 1)


def huber_loss_t(y_hat: torch.Tensor, y: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    e = (y_hat - y).abs()
    return torch.where(e <= delta, 0.5 * e * e, delta * e - 0.5 * delta * delta).mean()


# ---------------------------------------------------------------- model

class ConvLSTMCell(nn.Module):
    """Peephole ConvLSTM cell.

    The four input kernels ``W_x{f,c,i,o}`` live in one convolution and the
    four recurrent kernels ``W_h{f,c,i,o}`` in another; :meth:`kernel` returns
    the individual slices. Peepholes are element-wise grids over
    ``(hidden, H, W)``, one per gate unless ``shared_peephole``.
    """

    def __init__(self, in_channels, hidden, kernel_size=3, spatial=(32, 32), peephole=True,
                 shared_peephole=False):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.in_channels = in_channels
        self.hidden = hidden
        self.spatial = tuple(spatial)
        pad = kernel_size // 2
        self.conv_x = nn.Conv2d(in_channels, 4 * hidden, kernel_size, padding=pad, bias=True)
        self.conv_h = nn.Conv2d(hidden, 4 * hidden, kernel_size, padding=pad, bias=False)
        self.peephole = peephole
        self.shared_peephole = shared_peephole
        if peephole:
            n = 1 if shared_peephole else 3
            self.w_peep = nn.Parameter(torch.zeros(n, hidden, *self.spatial))
        else:
            self.register_parameter("w_peep", None)
        self.reset_parameters()

    def reset_parameters(self):
        for conv in (self.conv_x, self.conv_h):
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(conv.weight, -bound, bound)
        with torch.no_grad():
            self.conv_x.bias.zero_()
            self.bias("f").fill_(1.0)
            if self.w_peep is not None:
                self.w_peep.zero_()

    def _slice(self, gate):
        k = GATES.index(gate)
        return slice(k * self.hidden, (k + 1) * self.hidden)

    def kernel(self, name: str) -> torch.Tensor:
        """``kernel('xf')`` is W_xf, ``kernel('hc')`` is W_hc, and so on."""
        src, gate = name[0], name[1]
        conv = self.conv_x if src == "x" else self.conv_h
        return conv.weight[self._slice(gate)]

    def bias(self, gate: str) -> torch.Tensor:
        return self.conv_x.bias[self._slice(gate)]

    def peep(self, gate: str):
        if self.w_peep is None:
            return None
        return self.w_peep[0 if self.shared_peephole else PEEP_GATES.index(gate)]

    def init_state(self, batch, device=None, dtype=None):
        z = torch.zeros(batch, self.hidden, *self.spatial, device=device, dtype=dtype)
        return z, z.clone()

    def forward(self, x, state):
        h_prev, c_prev = state
        if x.shape[-2:] != h_prev.shape[-2:] or h_prev.shape[1] != self.hidden:
            raise ShapeError(f"input {tuple(x.shape)} incompatible with state {tuple(h_prev.shape)}")
        z = self.conv_x(x) + self.conv_h(h_prev)
        zf, zc, zi, zo = torch.split(z, self.hidden, dim=1)
        if self.peephole:
            zf = zf + self.peep("f") * c_prev
            zi = zi + self.peep("i") * c_prev
        f = torch.sigmoid(zf)
        i = torch.sigmoid(zi)
        c = f * c_prev + i * torch.tanh(zc)
        if self.peephole:
            zo = zo + self.peep("o") * c
        o = torch.sigmoid(zo)
        h = o * torch.tanh(c)
        return h, c


def convlstm_cell_step(x_t, h_prev, c_prev, cell: ConvLSTMCell):
    """One recurrence step on ``(B, C, H, W)`` tensors; returns ``(h_t, C_t)``."""
    return cell(x_t, (h_prev, c_prev))


class ConvLSTMNet(nn.Module):
    """ConvLSTM layers with batch norm in between, then a 1x1 conv + sigmoid."""

    def __init__(self, cfg: ConvLSTMConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ConvLSTMConfig()
        h, w = cfg.size
        cells, norms = [], []
        in_ch = cfg.in_channels
        for n, width in enumerate(cfg.hidden):
            scale = 2 ** n if cfg.pool else 1
            if h % scale or w % scale:
                raise ShapeError("image size not divisible by the pooling factor")
            cells.append(ConvLSTMCell(in_ch, width, cfg.kernel_size, (h // scale, w // scale),
                                      cfg.peephole, cfg.shared_peephole))
            norms.append(nn.BatchNorm2d(width))
            in_ch = width
        self.cells = nn.ModuleList(cells)
        self.norms = nn.ModuleList(norms)
        self.head = nn.Conv2d(in_ch, cfg.out_channels, 1)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        """``seq`` is ``(B, n, C, H, W)`` in unit range; returns ``(B, C_out, H, W)``."""
        if seq.dim() != 5 or seq.shape[1] != self.cfg.n_frames:
            raise ShapeError(f"expected (B, {self.cfg.n_frames}, C, H, W), got {tuple(seq.shape)}")
        if tuple(seq.shape[-2:]) != tuple(self.cfg.size):
            raise ShapeError(f"model built for {self.cfg.size}, got {tuple(seq.shape[-2:])}")
        b, n = seq.shape[:2]
        xs = [seq[:, t] for t in range(n)]
        last = len(self.cells) - 1
        for k, (cell, norm) in enumerate(zip(self.cells, self.norms)):
            state = cell.init_state(b, seq.device, seq.dtype)
            outs = []
            for x in xs:
                state = cell(x, state)
                outs.append(state[0])
            # one norm shared over time steps
            stacked = norm(torch.cat(outs, dim=0))
            if self.cfg.pool and k < last:
                stacked = F.max_pool2d(stacked, 2)
            xs = list(torch.split(stacked, b, dim=0))
        y = xs[-1]
        if y.shape[-2:] != seq.shape[-2:]:
            y = F.interpolate(y, size=seq.shape[-2:], mode="bilinear", align_corners=False)
        return torch.sigmoid(self.head(y))


def _seq_tensor(seq) -> torch.Tensor:
    if isinstance(seq, TemporalSequence):
        arr = np.stack([convert_range(f.values, f.range_tag, "unit") for f in seq.frames])
    else:
        arr = np.asarray(seq, dtype=np.float64)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float()


def convlstm_forward(seq, model: ConvLSTMNet) -> OpticalImage:
    """Predict frame n+1 from a TemporalSequence (or an ``(n, H, W, B)`` array)."""
    x = _seq_tensor(seq)
    if x.shape[0] != model.cfg.n_frames:
        raise ShapeError(f"model expects {model.cfg.n_frames} frames, got {x.shape[0]}")
    model.eval()
    with torch.no_grad():
        y = model(x[None].to(next(model.parameters()).dtype))[0]
    return OpticalImage(y.double().numpy().transpose(1, 2, 0), "unit")


# ---------------------------------------------------------------- training

def _stack_pairs(pairs):
    xs = torch.stack([_seq_tensor(s) for s, _ in pairs])
    ys = torch.stack([torch.from_numpy(np.ascontiguousarray(
        np.asarray(getattr(t, "values", t), dtype=np.float64).transpose(2, 0, 1))).float()
        for _, t in pairs])
    return xs, ys


def _eval_loss(model, xs, ys, delta, batch):
    model.eval()
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(xs), batch):
            pred = model(xs[s:s + batch])
            total += huber_loss_t(pred, ys[s:s + batch], delta).item() * len(pred)
    return total / len(xs)


def train_convlstm(dataset, cfg: TrainConfig | None = None, val_dataset=None,
                   model: ConvLSTMNet | None = None, model_cfg: ConvLSTMConfig | None = None,
                   on_epoch=None, start_epoch: int = 0, optimizer_state=None):
    """Fit the branch on ``[(frames t1..tn, frame t_{n+1}), ...]`` pairs.

    Adam with reduce-on-plateau and early stopping on the validation loss
    (the training set when ``val_dataset`` is None). The best weights are
    restored before returning ``(model, history)``.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    xs, ys = _stack_pairs(dataset)
    vx, vy = _stack_pairs(val_dataset) if val_dataset else (xs, ys)
    if model is None:
        mc = model_cfg or ConvLSTMConfig()
        mc = ConvLSTMConfig(**{**asdict(mc), "size": tuple(xs.shape[-2:]), "n_frames": xs.shape[1]})
        model = ConvLSTMNet(mc)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, factor=cfg.plateau_factor,
                                                       patience=cfg.plateau_patience)
    gen = torch.Generator().manual_seed(cfg.seed)
    delta = cfg.huber.delta
    best, best_state, stale = math.inf, copy.deepcopy(model.state_dict()), 0
    history = []
    for epoch in range(start_epoch, start_epoch + cfg.max_epochs):
        model.train()
        order = torch.randperm(len(xs), generator=gen)
        running = 0.0
        for s in range(0, len(xs), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            opt.zero_grad()
            loss = huber_loss_t(model(xs[idx]), ys[idx], delta)
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
        val = _eval_loss(model, vx, vy, delta, cfg.batch_size)
        sched.step(val)
        row = {"epoch": epoch, "train_loss": running / len(xs), "val_loss": val,
               "lr": opt.param_groups[0]["lr"]}
        history.append(row)
        if on_epoch:
            on_epoch(row, model, opt)
        if val < best:
            best, best_state, stale = val, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def sequence_pairs(frames, n: int = 3):
    """All ``(frames[t:t+n], frames[t+n])`` windows of one time series."""
    arr = [np.asarray(getattr(f, "values", f)) for f in frames]
    return [(np.stack(arr[t:t + n]), arr[t + n]) for t in range(len(arr) - n)]
