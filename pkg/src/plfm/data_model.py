"""Image and tensor types shared by every branch of the pipeline.

Arrays are stored row-major as ``(H, W, C)``. All values are real-valued;
quantization to bytes only happens on export and when building head targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

RANGES = {
    "unit": (0.0, 1.0),
    "symmetric": (-1.0, 1.0),
    "byte": (0.0, 255.0),
}

N_BANDS = 3
N_POLARIZATIONS = 1
FEATURE_CHANNELS = 6


class ShapeError(ValueError):
    pass


class RangeError(ValueError):
    pass


def _as_grid(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


@dataclass(frozen=True, eq=False)
class OpticalImage:
    values: np.ndarray
    range_tag: str = "unit"

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class SARImage:
    values: np.ndarray
    range_tag: str = "unit"
    looks: int = 1

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class TemporalSequence:
    frames: tuple
    timestamps: tuple = ()

    def __post_init__(self):
        frames = tuple(self.frames)
        stamps = tuple(self.timestamps) or tuple(range(len(frames)))
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", stamps)
        if len(stamps) != len(frames):
            raise ShapeError("one timestamp per frame required")
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError("timestamps must be strictly increasing")
        if frames:
            first = frames[0]
            for fr in frames[1:]:
                if fr.shape != first.shape or fr.range_tag != first.range_tag:
                    raise ShapeError("all frames must share shape and range_tag")

    def __len__(self):
        return len(self.frames)

    def stack(self) -> np.ndarray:
        """Frames as an ``(n, H, W, B)`` array."""
        return np.stack([f.values for f in self.frames])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Channel order is fixed: (Z_R, Z_G, Z_B, Y_R, Y_G, Y_B)."""

    values: np.ndarray
    range_tag: str = "unit"

    def __post_init__(self):
        arr = _as_grid(self.values)
        if arr.shape[-1] != FEATURE_CHANNELS:
            raise ShapeError(f"feature map needs {FEATURE_CHANNELS} channels, got {arr.shape[-1]}")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True, eq=False)
class ClassVolume:
    probs: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.probs.shape[-1]

    def check(self, atol: float = 1e-6) -> list[str]:
        problems = []
        p = self.probs
        if np.any(p < 0) or np.any(p > 1):
            problems.append("probabilities outside [0, 1]")
        if not np.allclose(p.sum(axis=-1), 1.0, atol=atol, rtol=0):
            problems.append("per-pixel probabilities do not sum to 1")
        return problems


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    def __bool__(self):
        # truthy when valid, mirrors "empty report"
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_image(img) -> ValidationReport:
    """Check an optical or SAR image against its type invariants.

    Never raises; every broken invariant becomes one entry of the report.
    """
    report = ValidationReport()
    vals = img.values
    if vals.ndim != 3:
        report.violations.append(f"expected a (H, W, C) grid, got ndim={vals.ndim}")
        return report
    h, w, c = vals.shape
    if h <= 0 or w <= 0:
        report.violations.append("empty spatial extent")
    if img.range_tag not in RANGES:
        report.violations.append(f"unknown range_tag {img.range_tag!r}")
        return report
    if not np.all(np.isfinite(vals)):
        report.violations.append("non-finite values")
    lo, hi = RANGES[img.range_tag]
    if isinstance(img, SARImage):
        if c != N_POLARIZATIONS:
            report.violations.append(f"polarization count {c} != {N_POLARIZATIONS}")
        if img.looks < 1:
            report.violations.append(f"looks must be >= 1, got {img.looks}")
        # speckle is unbounded above; only the lower bound is an invariant
        if img.range_tag == "unit" and np.any(vals < 0):
            report.violations.append("negative backscatter in unit range")
    else:
        if c != N_BANDS:
            report.violations.append(f"band count {c} != {N_BANDS}")
        fin = vals[np.isfinite(vals)]
        if fin.size and (fin.min() < lo or fin.max() > hi):
            report.violations.append(f"values outside {img.range_tag} range [{lo}, {hi}]")
    return report


def normalize(img, target_range: str):
    """Affine map of ``img`` from its range_tag onto ``target_range``."""
    if target_range not in RANGES:
        raise ValueError(f"unknown target range {target_range!r}")
    if img.range_tag not in RANGES:
        raise ValueError(f"unknown source range {img.range_tag!r}")
    vals = convert_range(img.values, img.range_tag, target_range)
    if isinstance(img, SARImage):
        return SARImage(vals, target_range, img.looks)
    if isinstance(img, FeatureMap):
        return FeatureMap(vals, target_range)
    return OpticalImage(vals, target_range)


def convert_range(values, source: str, target: str):
    """Array-level version of :func:`normalize`; works on numpy arrays and torch tensors."""
    if source == target:
        return values
    lo, hi = RANGES[source]
    tlo, thi = RANGES[target]
    return (values - lo) / (hi - lo) * (thi - tlo) + tlo


def concat_embeddings(z_hat: OpticalImage, y_hat: OpticalImage) -> FeatureMap:
    """Stack the cGAN output and the ConvLSTM output along the channel axis."""
    if z_hat.shape != y_hat.shape:
        raise ShapeError(f"embedding shapes differ: {z_hat.shape} vs {y_hat.shape}")
    if z_hat.shape[-1] != N_BANDS:
        raise ShapeError(f"embeddings need {N_BANDS} bands")
    if z_hat.range_tag != y_hat.range_tag:
        raise RangeError("embeddings must share a range_tag")
    return FeatureMap(np.concatenate([z_hat.values, y_hat.values], axis=-1), z_hat.range_tag)


def channel_pair(fmap: FeatureMap, k: int) -> np.ndarray:
    """The ``(H, W, 2)`` slice pairing colour ``k`` (1-based) of both embeddings."""
    if k not in (1, 2, 3):
        raise IndexError(f"channel pair index must be 1..3, got {k}")
    v = fmap.values
    return np.stack([v[:, :, k - 1], v[:, :, k - 1 + N_BANDS]], axis=-1)


def reassemble(pairs: Sequence[np.ndarray], range_tag: str = "unit") -> FeatureMap:
    """Inverse of taking ``channel_pair`` for k = 1, 2, 3."""
    z = [p[:, :, 0] for p in pairs]
    y = [p[:, :, 1] for p in pairs]
    return FeatureMap(np.stack(z + y, axis=-1), range_tag)


def grayscale(values: np.ndarray) -> np.ndarray:
    """Luma of an ``(H, W, 3)`` array (Rec. 601 weights)."""
    return values[..., 0] * 0.299 + values[..., 1] * 0.587 + values[..., 2] * 0.114


# --------------------------------------------------------------------------
# tensor files: raw little-endian float32 (H, W, C) plus a key:value sidecar

def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def write_tensor(path, values, **meta) -> Path:
    path = Path(path)
    arr = _as_grid(values)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr.astype("<f4").tofile(path)
    lines = {"shape": ",".join(str(s) for s in arr.shape), "dtype": "float32-le"}
    lines.update({k: v for k, v in meta.items() if v is not None})
    text = "".join(f"{k}: {v}\n" for k, v in lines.items())
    sidecar_path(path).write_text(text, encoding="utf-8")
    return path


def read_meta(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing sidecar {side}")
    meta = {}
    for n, line in enumerate(side.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise ValueError(f"{side}:{n}: malformed sidecar line {line!r}")
        meta[key.strip()] = value.strip()
    if "shape" not in meta:
        raise ValueError(f"{side}: sidecar has no shape")
    try:
        meta["shape"] = tuple(int(s) for s in meta["shape"].split(","))
    except ValueError:
        raise ValueError(f"{side}: bad shape {meta['shape']!r}") from None
    return meta


def read_tensor(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = read_meta(path)
    raw = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(meta["shape"]))
    if raw.size != expected:
        raise ValueError(f"{path}: {raw.size} values on disk, sidecar shape needs {expected}")
    return raw.reshape(meta["shape"]).astype(np.float64), meta


def load_image(path):
    """Read a tensor file into an OpticalImage or SARImage based on its sidecar."""
    values, meta = read_tensor(path)
    tag = meta.get("range_tag", "unit")
    if meta.get("sensor") == "S1":
        return SARImage(values, tag, int(meta.get("looks", 1)))
    return OpticalImage(values, tag)


def save_image(path, img, sensor: str = "synthetic", timestamp=None) -> Path:
    extra = {"looks": img.looks} if isinstance(img, SARImage) else {}
    return write_tensor(path, img.values, range_tag=img.range_tag, sensor=sensor,
                        timestamp=timestamp, **extra)


def export_rgb(path, img: OpticalImage) -> Path:
    """8-bit RGB PNG for visual inspection."""
    from PIL import Image

    unit = convert_range(img.values, img.range_tag, "unit")
    data = np.clip(np.round(unit * 255.0), 0, 255).astype(np.uint8)
    if data.shape[-1] == 1:
        data = np.repeat(data, 3, axis=-1)
    Image.fromarray(data, "RGB").save(path)
    return Path(path)
