"""Training-set builders and the desk-scale end-to-end run.

Every builder takes a list of :class:`~plfm.dataset.ROISeries` so the same
code serves in-memory synthetic corpora and series loaded from disk.
"""

from __future__ import annotations

import numpy as np

from .data_model import OpticalImage, SARImage, TemporalSequence
from .dataset import DatasetError, ROISeries
from .dataset.store import load_frame


def dihedral(arr, k: int) -> np.ndarray:
    """One of the 8 square symmetries applied to the two spatial axes of ``(..., H, W, C)``."""
    out = np.rot90(arr, k % 4, axes=(-3, -2))
    if k >= 4:
        out = np.flip(out, axis=-2)
    return np.ascontiguousarray(out)


def load_series(root, index, roi_id) -> ROISeries:
    """Read one ROI back into memory; ``gt`` and ``mask`` must exist."""
    entries = index.series(roi_id)
    if not entries:
        raise DatasetError(f"unknown roi {roi_id!r}")
    optical, cloudy, sar, masks = [], [], [], []
    for e in entries:
        try:
            gt = load_frame(root, e, "gt")
        except DatasetError:
            raise DatasetError(f"{roi_id} t{e.time_index}: no clean reference (gt.f32)") from None
        optical.append(gt)
        cloudy.append(load_frame(root, e, "s2"))
        sar.append(load_frame(root, e, "s1"))
        try:
            masks.append(load_frame(root, e, "mask").values[:, :, 0] > 0.5)
        except DatasetError:
            masks.append(np.zeros(gt.shape[:2], dtype=bool))
    return ROISeries(roi_id, optical, cloudy, sar, masks)


def convlstm_pairs(series_list, n: int = 3, augment: bool = False):
    """``(cloudy t..t+n-1, clean t+n)`` windows over every series."""
    pairs = []
    for s in series_list:
        frames = np.stack([f.values for f in s.cloudy])
        clean = np.stack([f.values for f in s.optical])
        for t in range(len(frames) - n):
            x, y = frames[t:t + n], clean[t + n]
            for k in range(8 if augment else 1):
                pairs.append((dihedral(x, k), dihedral(y, k)))
    return pairs


def cgan_pairs(series_list, augment: bool = False, times=None):
    """``(sar, clean optical)`` pairs, all time steps unless ``times`` is given."""
    pairs = []
    for s in series_list:
        for t in (range(len(s.sar)) if times is None else times):
            x, y = s.sar[t].values, s.optical[t].values
            for k in range(8 if augment else 1):
                pairs.append((dihedral(x, k), dihedral(y, k)))
    return pairs


def branch_outputs(series, t: int, convlstm, generator, n: int = 3):
    """Intermediate estimates ``(Y_hat, Z_hat)`` for frame ``t`` of one series."""
    from .cgan import generator_forward
    from .convlstm import convlstm_forward

    seq = TemporalSequence(tuple(series.cloudy[t - n:t]))
    y_hat = convlstm_forward(seq, convlstm)
    z_hat = generator_forward(series.sar[t], generator)
    return y_hat, z_hat


def head_triples(series_list, convlstm, generator, n: int = 3, augment: bool = False):
    """``(Y_hat, Z_hat, clean)`` for every predictable frame."""
    out = []
    for s in series_list:
        for t in range(n, len(s.optical)):
            y_hat, z_hat = branch_outputs(s, t, convlstm, generator, n)
            gt = s.optical[t].values
            for k in range(8 if augment else 1):
                out.append((dihedral(y_hat.values, k), dihedral(z_hat.values, k), dihedral(gt, k)))
    return out


def infer_series(series, models, t: int | None = None, return_intermediates: bool = False):
    """End-to-end estimate of frame ``t`` (default: last) from its predecessors and SAR."""
    from .head import plfm_infer

    n = models.convlstm.cfg.n_frames
    t = len(series.cloudy) - 1 if t is None else t
    if t < n:
        raise ValueError(f"frame {t} has fewer than {n} predecessors")
    seq = TemporalSequence(tuple(series.cloudy[t - n:t]))
    sar = series.sar[t]
    if not isinstance(sar, SARImage):
        sar = SARImage(np.asarray(sar))
    return plfm_infer(seq, sar, models, return_intermediates)


def as_optical(x) -> OpticalImage:
    return x if isinstance(x, OpticalImage) else OpticalImage(np.asarray(x))
