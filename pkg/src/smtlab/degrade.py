"""Photocopy / old-print style image degradations.

All operations are implemented natively (no external image tool): Gaussian
blur, contrast scaling, additive Gaussian noise, small rotation, tile-wise
ink bleed/erase, and an alpha-blended procedural paper texture. Parameters
are sampled from the configured ranges by a generator seeded from the
config, so a given (image, config) pair always degrades identically.
Neutral settings are skipped outright, so the identity config returns the
input bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .render import ImageSample

_BLEED_TILE = 16


@dataclass(frozen=True)
class DegradationConfig:
    blur_radius: tuple[float, float] = (0.0, 0.0)       # px (Gaussian sigma)
    contrast: tuple[float, float] = (1.0, 1.0)          # scale around mid-gray
    noise_sigma: tuple[float, float] = (0.0, 0.0)       # additive Gaussian
    rotation_deg: tuple[float, float] = (0.0, 0.0)
    ink_bleed_prob: float = 0.0                         # per glyph-sized tile
    texture_weight: float = 0.0                         # alpha in [0, 1]
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_radius", "contrast", "noise_sigma", "rotation_deg"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} range ({lo}, {hi}) must be finite and ordered")
        if not 0.0 <= self.ink_bleed_prob <= 1.0:
            raise ValueError("ink_bleed_prob must be in [0, 1]")
        if not 0.0 <= self.texture_weight <= 1.0:
            raise ValueError("texture_weight must be in [0, 1]")


IDENTITY = DegradationConfig()

PRESETS = {
    "none": IDENTITY,
    "photocopy": DegradationConfig(
        blur_radius=(0.4, 1.1),
        contrast=(0.72, 1.25),
        noise_sigma=(0.02, 0.06),
        rotation_deg=(-1.5, 1.5),
    ),
    "oldprint": DegradationConfig(
        blur_radius=(0.4, 1.1),
        contrast=(0.72, 1.25),
        noise_sigma=(0.03, 0.08),
        rotation_deg=(-1.5, 1.5),
        ink_bleed_prob=0.35,
        texture_weight=0.25,
    ),
}


def preset(name: str, seed: int = 0) -> DegradationConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown degradation preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], seed=seed)


def _paper_texture(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    rough = rng.standard_normal(shape).astype(np.float32)
    smooth = ndimage.gaussian_filter(rough, sigma=8.0)
    lo, hi = float(smooth.min()), float(smooth.max())
    if hi - lo < 1e-12:
        return np.full(shape, 0.8, dtype=np.float32)
    norm = (smooth - lo) / (hi - lo)
    fibers = ndimage.gaussian_filter(rng.standard_normal(shape).astype(np.float32), sigma=1.2)
    return np.clip(0.62 + 0.3 * norm + 0.05 * fibers, 0.0, 1.0).astype(np.float32)


def _ink_bleed(img: np.ndarray, rng: np.random.Generator, prob: float) -> np.ndarray:
    th = math.ceil(img.shape[0] / _BLEED_TILE)
    tw = math.ceil(img.shape[1] / _BLEED_TILE)
    affected = rng.random((th, tw)) < prob
    bleed_dir = rng.random((th, tw)) < 0.5  # True: bleed (ink grows), False: erase
    if not affected.any():
        return img
    grown = ndimage.minimum_filter(img, size=2)
    eroded = ndimage.maximum_filter(img, size=2)
    up = np.kron(affected, np.ones((_BLEED_TILE, _BLEED_TILE), dtype=bool))
    up_dir = np.kron(bleed_dir, np.ones((_BLEED_TILE, _BLEED_TILE), dtype=bool))
    up = up[: img.shape[0], : img.shape[1]]
    up_dir = up_dir[: img.shape[0], : img.shape[1]]
    return np.where(up, np.where(up_dir, grown, eroded), img)


def degrade(sample: ImageSample, cfg: DegradationConfig) -> ImageSample:
    """Degraded copy of a sample; the reference kern is untouched."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 0x5EED]))
    sigma = float(rng.uniform(*cfg.blur_radius))
    contrast = float(rng.uniform(*cfg.contrast))
    noise_sigma = float(rng.uniform(*cfg.noise_sigma))
    angle = float(rng.uniform(*cfg.rotation_deg))

    img = sample.pixels
    if angle != 0.0:
        img = ndimage.rotate(img, angle, reshape=False, order=1, mode="constant", cval=1.0)
    if sigma > 0.0:
        img = ndimage.gaussian_filter(img, sigma=sigma)
    if contrast != 1.0:
        img = 0.5 + contrast * (img - 0.5)
    if cfg.ink_bleed_prob > 0.0:
        img = _ink_bleed(np.clip(img, 0.0, 1.0).astype(np.float32), rng, cfg.ink_bleed_prob)
    if noise_sigma > 0.0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    if cfg.texture_weight > 0.0:
        texture = _paper_texture(rng, img.shape)
        img = (1.0 - cfg.texture_weight) * img + cfg.texture_weight * texture
    if img is sample.pixels:
        pixels = sample.pixels
    else:
        pixels = np.clip(img, 0.0, 1.0).astype(np.float32)
    return ImageSample(
        pixels=pixels, kern=sample.kern, piece_id=sample.piece_id, split=sample.split
    )
