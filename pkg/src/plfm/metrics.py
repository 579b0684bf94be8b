"""Image quality measures and co-registration shift compensation (CSC).

All functions take ``(ref, pred)`` as ``(H, W, B)`` arrays (or images with a
``values`` attribute) in the same value range. Band-wise measures are
averaged over bands.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0

MAXIMIZE = ("psnr", "ssim", "cc", "uqi")
MINIMIZE = ("mse", "rmse", "sam", "dd")
METRIC_ORDER = ("psnr", "ssim", "sam", "mse", "rmse", "cc", "dd", "uqi")

# Cloud-coverage buckets (percent): <=20, (20,50], (50,80], (80,100]
BUCKETS = (("<=20", 0.0, 20.0), ("20-50", 20.0, 50.0), ("50-80", 50.0, 80.0), ("80-100", 80.0, 100.0))


class DegenerateInputError(ValueError):
    """A metric is undefined for the given data (zero peak, zero variance, ...)."""


def _pair(ref, pred):
    a = np.asarray(getattr(ref, "values", ref), dtype=np.float64)
    b = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if b.ndim == 2:
        b = b[:, :, None]
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _band_psnr(a, b):
    peak = a.max()
    if peak <= 0:
        raise DegenerateInputError("reference band has zero peak; PSNR undefined")
    sse = np.sum((a - b) ** 2)
    if sse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak * a.size / sse))


def psnr(ref, pred) -> float:
    """Per-band peak SNR in dB, averaged over bands; capped at 100 dB."""
    a, b = _pair(ref, pred)
    return float(np.mean([_band_psnr(a[..., k], b[..., k]) for k in range(a.shape[-1])]))


def _moments(a, b):
    n = a.size
    ma, mb = a.mean(), b.mean()
    da, db = a - ma, b - mb
    ddof = n - 1 if n > 1 else 1
    va = np.sum(da * da) / ddof
    vb = np.sum(db * db) / ddof
    cov = np.sum(da * db) / ddof
    return ma, mb, va, vb, cov


def ssim(ref, pred, data_range: float = 1.0) -> float:
    """Global-statistics SSIM per band, band-averaged."""
    a, b = _pair(ref, pred)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for k in range(a.shape[-1]):
        ma, mb, va, vb, cov = _moments(a[..., k], b[..., k])
        num = (2 * ma * mb + c1) * (2 * cov + c2)
        den = (ma * ma + mb * mb + c1) * (va + vb + c2)
        vals.append(num / den)
    return float(np.mean(vals))


def sam(ref, pred, degrees: bool = False) -> float:
    """Mean spectral angle over pixels; zero-norm pixels are skipped."""
    a, b = _pair(ref, pred)
    a = a.reshape(-1, a.shape[-1])
    b = b.reshape(-1, b.shape[-1])
    dot = np.sum(a * b, axis=1)
    na = np.sum(a * a, axis=1)
    nb = np.sum(b * b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        raise DegenerateInputError("every pixel has a zero spectral vector")
    cos = np.clip(dot[ok] / np.sqrt(na[ok] * nb[ok]), -1.0, 1.0)
    angle = float(np.mean(np.arccos(cos)))
    return math.degrees(angle) if degrees else angle


def sam_skipped(ref, pred) -> int:
    """How many pixels :func:`sam` skips."""
    a, b = _pair(ref, pred)
    na = np.sum(a * a, axis=-1)
    nb = np.sum(b * b, axis=-1)
    return int(np.sum((na == 0) | (nb == 0)))


def mse(ref, pred) -> float:
    a, b = _pair(ref, pred)
    return float(np.mean((a - b) ** 2))


def rmse(ref, pred) -> float:
    """Frobenius norm of the residual over sqrt(pixels x bands)."""
    a, b = _pair(ref, pred)
    return float(np.sqrt(np.sum((b - a) ** 2) / a.size))


def _ccs(a, b):
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = np.sum(da * da), np.sum(db * db)
    if saa == 0 or sbb == 0:
        return None
    return np.sum(da * db) / np.sqrt(saa * sbb)


def cc(ref, pred) -> float:
    """Band-averaged Pearson correlation. Constant bands are skipped with a warning."""
    a, b = _pair(ref, pred)
    vals = [_ccs(a[..., k], b[..., k]) for k in range(a.shape[-1])]
    kept = [v for v in vals if v is not None]
    skipped = len(vals) - len(kept)
    if not kept:
        raise DegenerateInputError("every band is constant; CC undefined")
    if skipped:
        warnings.warn(f"cc: skipped {skipped} constant band(s)", RuntimeWarning, stacklevel=2)
    return float(np.mean(kept))


def dd(ref, pred) -> float:
    """Degree of distortion: mean absolute difference."""
    a, b = _pair(ref, pred)
    return float(np.sum(np.abs(a - b)) / a.size)


def uqi(ref, pred) -> float:
    """Universal quality index per band (covariance in the numerator), band-averaged."""
    a, b = _pair(ref, pred)
    vals = []
    for k in range(a.shape[-1]):
        ma, mb, va, vb, cov = _moments(a[..., k], b[..., k])
        den = (va + vb) * (ma * ma + mb * mb)
        if den == 0:
            raise DegenerateInputError("UQI denominator is zero")
        vals.append(4.0 * (cov * (ma * mb)) / den)
    return float(np.mean(vals))


METRICS = {
    "psnr": psnr,
    "ssim": ssim,
    "sam": sam,
    "mse": mse,
    "rmse": rmse,
    "cc": cc,
    "dd": dd,
    "uqi": uqi,
}


def improving_mode(metric_id: str) -> str:
    if metric_id in MAXIMIZE:
        return "max"
    if metric_id in MINIMIZE:
        return "min"
    raise KeyError(f"unknown metric {metric_id!r}")


def shifted_overlap(ref, pred, e1: int, e2: int):
    """Crop ``ref`` and ``pred`` to their overlap after moving pred's content by (e1, e2).

    The returned pred view satisfies ``pred_view[i, j] == pred[i - e1, j - e2]``
    in reference coordinates; nothing is wrapped or padded.
    """
    h, w = ref.shape[:2]
    r_rows = slice(max(e1, 0), h + min(e1, 0))
    p_rows = slice(max(-e1, 0), h - max(e1, 0))
    r_cols = slice(max(e2, 0), w + min(e2, 0))
    p_cols = slice(max(-e2, 0), w - max(e2, 0))
    return ref[r_rows, r_cols], pred[p_rows, p_cols]


def with_csc(metric_id: str, ref, pred, radius: int = 2, mode: str | None = None, **kwargs):
    """Best value of a metric over integer shifts of the prediction.

    Every ``(e1, e2)`` in ``[-radius, radius]^2`` is tried; both images are
    cropped to the valid overlap. Returns ``(value, (e1, e2))``. Ties go to
    the lexicographically lowest shift.
    """
    fn = METRICS[metric_id]
    mode = mode or improving_mode(metric_id)
    if mode not in ("min", "max"):
        raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
    a, b = _pair(ref, pred)
    radius = int(radius)
    if radius < 0:
        raise ValueError("shift radius must be >= 0")
    h, w = a.shape[:2]
    if (h - radius) * (w - radius) < 0.5 * h * w or radius >= min(h, w):
        raise ValueError(f"shift radius {radius} too large for a {h}x{w} image")
    best, best_shift = None, (0, 0)
    for e1 in range(-radius, radius + 1):
        for e2 in range(-radius, radius + 1):
            ra, pb = shifted_overlap(a, b, e1, e2)
            v = fn(ra, pb, **kwargs)
            if best is None or (v > best if mode == "max" else v < best):
                best, best_shift = v, (e1, e2)
    return best, best_shift


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    sam: float
    mse: float
    rmse: float
    cc: float
    dd: float
    uqi: float
    csc_applied: bool = False
    shift_chosen: tuple = (0, 0)
    shifts: dict = field(default_factory=dict)
    per_band: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_ORDER}

    def tsv_row(self, image_id: str) -> str:
        cells = [image_id] + [repr(float(getattr(self, k))) for k in METRIC_ORDER]
        cells += [str(int(self.csc_applied)), str(self.shift_chosen[0]), str(self.shift_chosen[1])]
        return "\t".join(cells)

    @staticmethod
    def tsv_header() -> str:
        return "\t".join(("image_id",) + METRIC_ORDER + ("csc", "e1", "e2"))


@dataclass
class EvalConfig:
    csc: bool = False
    radius: int = 2
    degrees: bool = False
    data_range: float = 1.0


def _per_band(a, b, data_range):
    out = {}
    for name in ("psnr", "ssim", "cc", "uqi"):
        vals = []
        for k in range(a.shape[-1]):
            try:
                kw = {"data_range": data_range} if name == "ssim" else {}
                vals.append(METRICS[name](a[..., k:k + 1], b[..., k:k + 1], **kw))
            except DegenerateInputError:
                vals.append(float("nan"))
        out[name] = vals
    return out


def evaluate(pred, gt, cfg: EvalConfig | None = None) -> MetricsReport:
    """All eight measures for one pair, optionally CSC-compensated.

    With CSC each measure is optimized over shifts on its own; ``shift_chosen``
    reports the PSNR optimum and ``shifts`` holds every metric's shift.
    """
    cfg = cfg or EvalConfig()
    a, b = _pair(gt, pred)
    kwargs = {"ssim": {"data_range": cfg.data_range}, "sam": {"degrees": cfg.degrees}}
    vals, shifts = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name in METRIC_ORDER:
            kw = kwargs.get(name, {})
            if cfg.csc:
                vals[name], shifts[name] = with_csc(name, a, b, cfg.radius, **kw)
            else:
                vals[name], shifts[name] = METRICS[name](a, b, **kw), (0, 0)
        per_band = _per_band(a, b, cfg.data_range)
    return MetricsReport(**vals, csc_applied=cfg.csc, shift_chosen=shifts["psnr"],
                         shifts=shifts, per_band=per_band)


def coverage_bucket(coverage: float) -> str:
    """Bucket label for a cloud coverage given as a fraction in [0, 1]."""
    pct = 100.0 * coverage
    for label, lo, hi in BUCKETS:
        if pct <= hi and (pct > lo or lo == 0.0):
            return label
    raise ValueError(f"coverage {coverage} outside [0, 1]")


def bucket_means(rows) -> list:
    """Mean metric row per populated coverage bucket, in bucket order.

    ``rows`` is an iterable of ``(coverage, MetricsReport | dict)``.
    """
    groups: dict = {}
    for coverage, rep in rows:
        vals = rep.values() if isinstance(rep, MetricsReport) else rep
        groups.setdefault(coverage_bucket(coverage), []).append(vals)
    out = []
    for label, _, _ in BUCKETS:
        if label in groups:
            g = groups[label]
            out.append((label, len(g), {k: float(np.mean([v[k] for v in g])) for k in METRIC_ORDER}))
    return out


__all__ = [
    "psnr", "ssim", "sam", "mse", "rmse", "cc", "dd", "uqi", "with_csc", "evaluate",
    "MetricsReport", "EvalConfig", "coverage_bucket", "bucket_means", "shifted_overlap",
    "DegenerateInputError", "METRICS", "METRIC_ORDER", "BUCKETS", "PSNR_CAP",
]
