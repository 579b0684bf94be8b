"""Synthetic paired SAR/optical time series.

Stands in for real Sentinel acquisitions: each region of interest gets a
procedural terrain, a monthly drift, per-frame clouds and speckled SAR.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ..data_model import OpticalImage, SARImage, grayscale

# thickness / coverage thresholds for the three cloud regimes
THIN_MAX_THICKNESS = 0.4
THICK_MIN_THICKNESS = 0.7
FULL_MIN_COVERAGE = 0.95

N_STEPS = 4

# land-cover palette (RGB, unit range)
_WATER = np.array([0.06, 0.12, 0.22])
_VEGETATION = np.array([0.12, 0.36, 0.10])
_SOIL = np.array([0.48, 0.38, 0.26])
_ROCK = np.array([0.62, 0.60, 0.58])


@dataclass
class SceneConfig:
    size: int = 64
    n_steps: int = N_STEPS
    coverage: float | Sequence[float] = 0.3
    thickness: float = 0.85
    looks: int = 1
    drift: float = 0.06
    structure_drift: float = 0.04
    texture: float = 0.03

    def coverages(self) -> list[float]:
        if np.ndim(self.coverage) == 0:
            return [float(self.coverage)] * self.n_steps
        cov = [float(c) for c in self.coverage]
        if len(cov) != self.n_steps:
            raise ValueError(f"need {self.n_steps} coverage values, got {len(cov)}")
        return cov

    def validate(self):
        if self.size < 16:
            raise ValueError(f"image size must be >= 16, got {self.size}")
        if self.n_steps < 2:
            raise ValueError("need at least two time steps")
        for c in self.coverages():
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"coverage {c} outside [0, 1]")
        if not 0.0 <= self.thickness <= 1.0:
            raise ValueError(f"thickness {self.thickness} outside [0, 1]")
        if self.looks < 1:
            raise ValueError("looks must be >= 1")


@dataclass(eq=False)
class ROISeries:
    roi_id: str
    optical: list            # clean frames, the ground truth
    cloudy: list             # observed frames
    sar: list
    cloud_masks: list
    metadata: dict = field(default_factory=dict)

    def coverage(self, t: int) -> float:
        m = self.cloud_masks[t]
        return float(m.sum()) / m.size


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _smooth_field(rng, shape, sigma) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    std = f.std()
    return (f - f.mean()) / (std if std > 0 else 1.0)


def _unit(f):
    lo, hi = f.min(), f.max()
    return (f - lo) / (hi - lo) if hi > lo else np.zeros_like(f)


def speckle(shape, looks: int = 1, seed=None) -> np.ndarray:
    """Multiplicative speckle, Gamma(looks, 1/looks): mean 1, variance 1/looks."""
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    return _rng(seed).gamma(shape=looks, scale=1.0 / looks, size=shape)


def simulate_sar(optical_gray, looks: int = 1, seed=None) -> SARImage:
    """Corrupt a grey-level optical grid with single/multi-look speckle."""
    gray = np.asarray(optical_gray, dtype=np.float64)
    if gray.ndim == 3:
        if gray.shape[-1] != 1:
            raise ValueError("simulate_sar expects a single-channel grid")
        gray = gray[:, :, 0]
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    if gray.size and (gray.min() < 0 or gray.max() > 1):
        raise ValueError("optical_gray must lie in [0, 1]")
    out = gray * speckle(gray.shape, looks, seed)
    return SARImage(out[:, :, None], "unit", looks)


def apply_clouds(img: OpticalImage, coverage: float, thickness: float, seed=None):
    """Alpha-blend a smooth cloud field over ``img``.

    Returns ``(cloudy, mask)`` where mask marks pixels whose opacity exceeds
    half the requested thickness. The threshold is taken at the field's
    quantile so the mask coverage tracks ``coverage`` closely.
    """
    if not 0.0 <= coverage <= 1.0:
        raise ValueError(f"coverage {coverage} outside [0, 1]")
    if not 0.0 <= thickness <= 1.0:
        raise ValueError(f"thickness {thickness} outside [0, 1]")
    rng = _rng(seed)
    h, w = img.values.shape[:2]
    if coverage == 0.0:
        return OpticalImage(img.values.copy(), img.range_tag), np.zeros((h, w), dtype=bool)

    shape_field = _smooth_field(rng, (h, w), sigma=max(h, w) / 10.0)
    if coverage >= 1.0:
        soft = np.ones((h, w))
    else:
        q = np.quantile(shape_field, 1.0 - coverage)
        soft = np.clip(0.5 + (shape_field - q) / 0.6, 0.0, 1.0)
    alpha = thickness * soft

    texture = _smooth_field(rng, (h, w), sigma=1.5)
    cloud = np.clip(0.9 + 0.05 * texture, 0.0, 1.0)[:, :, None]
    a = alpha[:, :, None]
    cloudy = (1.0 - a) * img.values + a * cloud
    mask = alpha > 0.5 * thickness
    return OpticalImage(cloudy, img.range_tag), mask


def _terrain(rng, size):
    elev = _unit(_smooth_field(rng, (size, size), size / 8.0)
                 + 0.5 * _smooth_field(rng, (size, size), size / 16.0))
    moist = _unit(_smooth_field(rng, (size, size), size / 6.0))
    delta = _smooth_field(rng, (size, size), size / 10.0)
    water_level = rng.uniform(0.2, 0.35)
    phase = rng.uniform(0, 2 * np.pi)
    return elev, moist, delta, water_level, phase


def _render(elev, moist, water_level, greenness, rng, texture):
    water = (elev < water_level).astype(float)
    rock = np.clip((elev - 0.75) / 0.1, 0, 1)
    veg = np.clip((moist - 0.35) / 0.2, 0, 1) * greenness
    veg = np.clip(veg, 0, 1)
    land = _SOIL * (1 - veg[..., None]) + _VEGETATION * veg[..., None]
    land = land * (1 - rock[..., None]) + _ROCK * rock[..., None]
    shade = 0.85 + 0.3 * (elev[..., None] - 0.5)
    land = land * shade
    img = land * (1 - water[..., None]) + _WATER * water[..., None]
    img = img + texture * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_scene(seed: int, cfg: SceneConfig | None = None, roi_id: str | None = None) -> ROISeries:
    """Generate one ROI time series, a pure function of ``(seed, cfg)``."""
    cfg = cfg or SceneConfig()
    cfg.validate()
    ss = np.random.SeedSequence(seed)
    terrain_ss, frames_ss = ss.spawn(2)
    rng = np.random.default_rng(terrain_ss)
    elev, moist, delta, water_level, phase = _terrain(rng, cfg.size)

    optical, cloudy, sar, masks = [], [], [], []
    frame_seeds = frames_ss.spawn(cfg.n_steps)
    for t, (cov, fss) in enumerate(zip(cfg.coverages(), frame_seeds)):
        tex_ss, cloud_ss, sar_ss = fss.spawn(3)
        greenness = 1.0 + cfg.drift * 4 * np.sin(phase + 2 * np.pi * t / 12.0)
        elev_t = np.clip(elev + cfg.structure_drift * t * delta, 0, 1)
        wl = water_level + cfg.drift * 0.5 * np.sin(phase + 2 * np.pi * t / 6.0)
        clean = OpticalImage(_render(elev_t, moist, wl, greenness,
                                     np.random.default_rng(tex_ss), cfg.texture))
        obs, mask = apply_clouds(clean, cov, cfg.thickness, np.random.default_rng(cloud_ss))
        optical.append(clean)
        cloudy.append(obs)
        masks.append(mask)
        sar.append(simulate_sar(grayscale(clean.values), cfg.looks, np.random.default_rng(sar_ss)))

    meta = {"seed": seed, **asdict(cfg), "water_level": float(water_level), "phase": float(phase)}
    if np.ndim(cfg.coverage):
        meta["coverage"] = list(cfg.coverages())
    return ROISeries(roi_id or f"roi{seed:05d}", optical, cloudy, sar, masks, meta)


def cloud_regime(coverage: float, thickness: float) -> str:
    if coverage >= FULL_MIN_COVERAGE:
        return "full"
    if thickness >= THICK_MIN_THICKNESS:
        return "thick"
    if thickness <= THIN_MAX_THICKNESS:
        return "thin"
    return "medium"
