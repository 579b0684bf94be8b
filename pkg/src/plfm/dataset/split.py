"""Histogram-dissimilarity train/validation/test split.

Many random ROI-level 80/20 splits are scored by comparing cumulative
intensity histograms of N images drawn from each side; the least
dissimilar split wins. The test set is carved from the training remainder
with the same procedure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..data_model import RANGES


@dataclass
class Histogram:
    counts: np.ndarray
    bins: int
    cumulative: bool = True


@dataclass
class SplitResult:
    train_ids: list
    val_ids: list
    test_ids: list
    dissimilarity: float
    trace: np.ndarray
    test_dissimilarity: float = float("nan")
    test_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def labels(self) -> dict:
        out = {r: "train" for r in self.train_ids}
        out.update({r: "val" for r in self.val_ids})
        out.update({r: "test" for r in self.test_ids})
        return out


def cumulative_histogram(images: Sequence, bins: int = 20, range_tag: str = "unit") -> Histogram:
    """Pool every pixel of every image (all bands) into one cumulative histogram."""
    if len(images) == 0:
        raise ValueError("cumulative histogram of an empty sample")
    if bins < 2:
        raise ValueError("need at least two bins")
    lo, hi = RANGES[range_tag]
    counts = np.zeros(bins, dtype=np.float64)
    for img in images:
        vals = getattr(img, "values", img)
        c, _ = np.histogram(np.asarray(vals).ravel(), bins=bins, range=(lo, hi))
        counts += c
    return Histogram(np.cumsum(counts), bins, cumulative=True)


def dissimilarity(h_train: Histogram, h_val: Histogram, n: int, normalized: bool = False) -> float:
    """Relative L1 gap between two cumulative histograms.

    The default evaluates the formula term by term, including the
    1/n and 1/#bins factors that cancel. ``normalized=True`` first rescales
    both histograms to unit total mass.
    """
    if h_train.bins != h_val.bins or h_train.counts.shape != h_val.counts.shape:
        raise ValueError(f"bin mismatch: {h_train.bins} vs {h_val.bins}")
    if not (h_train.cumulative and h_val.cumulative):
        raise ValueError("dissimilarity is defined on cumulative histograms")
    a = np.asarray(h_train.counts, dtype=np.float64)
    b = np.asarray(h_val.counts, dtype=np.float64)
    if normalized:
        if a[-1] <= 0 or b[-1] <= 0:
            raise ValueError("cannot normalize an empty histogram")
        a, b = a / a[-1], b / b[-1]
    nb = h_train.bins
    num = np.sum(np.abs(a / nb - b / nb)) / n
    den = np.sum(a / nb) / n
    if den == 0:
        raise ValueError("training histogram is empty (zero denominator)")
    return float(num / den)


def _iteration_rng(seed, iteration, stage):
    return np.random.default_rng([seed, stage, iteration])


def _best_partition(images_by_roi: Mapping[str, Sequence], roi_ids: list, fraction: float,
                    iterations: int, n: int, bins: int, seed: int, stage: int,
                    range_tag: str, normalized: bool):
    total = len(roi_ids)
    n_small = int(round(fraction * total))
    n_small = min(max(n_small, 1), total - 1)
    trace = np.empty(iterations)
    parts = []
    for it in range(iterations):
        rng = _iteration_rng(seed, it, stage)
        perm = rng.permutation(total)
        small = [roi_ids[i] for i in sorted(perm[:n_small])]
        large = [roi_ids[i] for i in sorted(perm[n_small:])]
        imgs_a = [im for r in large for im in images_by_roi[r]]
        imgs_b = [im for r in small for im in images_by_roi[r]]
        n_eff = min(n, len(imgs_a), len(imgs_b))
        pick_a = rng.choice(len(imgs_a), size=n_eff, replace=False)
        pick_b = rng.choice(len(imgs_b), size=n_eff, replace=False)
        h_a = cumulative_histogram([imgs_a[i] for i in pick_a], bins, range_tag)
        h_b = cumulative_histogram([imgs_b[i] for i in pick_b], bins, range_tag)
        trace[it] = dissimilarity(h_a, h_b, n_eff, normalized)
        parts.append((large, small))
    best = int(np.argmin(trace))  # first index wins ties
    return parts[best][0], parts[best][1], float(trace[best]), trace


def split_rois(images_by_roi: Mapping[str, Sequence], iterations: int = 2000, n: int = 150,
               bins: int = 20, seed: int = 0, val_fraction: float = 0.2,
               test_fraction: float = 0.1, range_tag: str = "unit",
               normalized: bool = False) -> SplitResult:
    """Run the splitting procedure on an in-memory ``{roi_id: [images]}`` map."""
    roi_ids = sorted(images_by_roi)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    need = 3 if test_fraction > 0 else 2
    if len(roi_ids) < need:
        raise ValueError(f"need at least {need} ROIs for non-empty partitions, got {len(roi_ids)}")
    if any(len(images_by_roi[r]) == 0 for r in roi_ids):
        raise ValueError("every ROI must contribute at least one image")

    train, val, d, trace = _best_partition(images_by_roi, roi_ids, val_fraction, iterations,
                                           n, bins, seed, 0, range_tag, normalized)
    test, d_test, test_trace = [], float("nan"), np.zeros(0)
    if test_fraction > 0:
        train, test, d_test, test_trace = _best_partition(images_by_roi, train, test_fraction,
                                                          iterations, n, bins, seed, 1,
                                                          range_tag, normalized)
    return SplitResult(train, val, test, d, trace, d_test, test_trace)


def split_dataset(index, iterations: int = 2000, n: int = 150, bins: int = 20, seed: int = 0,
                  loader: Callable | None = None, **kwargs) -> SplitResult:
    """Split a :class:`DatasetIndex` at ROI granularity.

    Images are the optical entries of the index, read with ``loader``
    (defaults to reading the tensor files).
    """
    from .store import load_optical

    if loader is None:
        def loader(e):
            return load_optical(index.root, e)
    images_by_roi: dict = {}
    for e in index.entries:
        images_by_roi.setdefault(e.roi_id, []).append(loader(e))
    return split_rois(images_by_roi, iterations, n, bins, seed, **kwargs)
