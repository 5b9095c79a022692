"""Random rotation, reflection and noise for oversampled images."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NonSquareInput
from .imageops import as_image, quantize


@dataclass(frozen=True)
class AugmentConfig:
    rotation_max: float = 360.0
    flip_prob: float = 0.5
    noise_sigma: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rotation_max <= 360:
            raise ValueError(f"rotation_max must lie in (0, 360], got {self.rotation_max}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def rotate(img, angle: float) -> np.ndarray:
    """Rotate a square image counter-clockwise by ``angle`` degrees about its centre.

    Uses inverse mapping with bilinear resampling; samples falling outside
    the frame read as 0. ``rotate(img, 90)`` equals ``np.rot90(img)``.
    """
    img = as_image(img)
    n, m = img.shape[:2]
    if n != m:
        raise NonSquareInput(f"rotation needs a square image, got {n}x{m}")
    if angle % 360 == 0:
        return img.copy()
    theta = math.radians(angle)
    cos, sin = math.cos(theta), math.sin(theta)
    c = (n - 1) / 2
    rr, qq = np.meshgrid(np.arange(n, dtype=np.float64) - c, np.arange(n, dtype=np.float64) - c, indexing="ij")
    src_r = c + cos * rr + sin * qq
    src_q = c + cos * qq - sin * rr
    return quantize(kernels.bilinear_sample(img.astype(np.float64), src_r, src_q, True))


def reflect(img, horizontal: bool = False, vertical: bool = False) -> np.ndarray:
    """Mirror left-right (``horizontal``) and/or top-bottom (``vertical``)."""
    img = as_image(img)
    if horizontal:
        img = img[:, ::-1]
    if vertical:
        img = img[::-1]
    return np.ascontiguousarray(img)


def add_noise(img, sigma: float, seed: int) -> np.ndarray:
    img = as_image(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=img.shape)
    return quantize(img.astype(np.float64) + noise)


def augment(img, cfg: AugmentConfig) -> np.ndarray:
    """Rotate, then reflect, then add noise, all drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    angle = rng.uniform(0.0, cfg.rotation_max)
    flip_h, flip_v = rng.random(2) < cfg.flip_prob
    noise_seed = int(rng.integers(0, 2**63 - 1))
    out = rotate(img, angle)
    out = reflect(out, bool(flip_h), bool(flip_v))
    return add_noise(out, cfg.noise_sigma, noise_seed)
