"""Fundus preprocessing: border crop, Gaussian brightness normalisation,
circular mask and resize.

Images are ``uint8`` arrays of shape ``(height, width, 3)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InvalidSigma, InvalidSize, NoContentWarning

TARGET_SIZES = (224, 299, 512)


def as_image(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image is empty")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def quantize(x: np.ndarray) -> np.ndarray:
    """Round to nearest and clamp into uint8."""
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 512
    black_threshold: int = 7
    blend_alpha: float = 4.0
    blend_bias: float = 128.0
    sigma_ratio: float = 1 / 30

    def __post_init__(self):
        if self.target_size not in TARGET_SIZES:
            raise InvalidSize(f"target_size must be one of {TARGET_SIZES}, got {self.target_size}")
        if not 0 <= self.black_threshold <= 255:
            raise InvalidSize(f"black_threshold must lie in [0, 255], got {self.black_threshold}")
        if not self.blend_alpha > 0:
            raise InvalidSigma(f"blend_alpha must be positive, got {self.blend_alpha}")
        if not self.sigma_ratio > 0:
            raise InvalidSigma(f"sigma_ratio must be positive, got {self.sigma_ratio}")

    @property
    def sigma(self) -> float:
        return self.sigma_ratio * self.target_size

    def to_dict(self) -> dict:
        return asdict(self)


def crop_black_border(img, threshold: int = 7) -> np.ndarray:
    """Crop to the tight box of rows and columns holding any pixel brighter than ``threshold``.

    An image with no such pixel is returned unchanged and a
    :class:`NoContentWarning` is emitted.
    """
    img = as_image(img)
    mask = img.max(axis=2) > threshold
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        warnings.warn("no pixel above the black threshold; image left uncropped", NoContentWarning, stacklevel=2)
        return img
    cols = np.flatnonzero(mask.any(axis=0))
    return img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise InvalidSigma(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Float64 Gaussian blur with edge-clamped borders (not quantised)."""
    return kernels.separable_blur(np.asarray(img, dtype=np.float64), gaussian_kernel(sigma))


def gaussian_blend(img, alpha: float = 4.0, sigma: float = 10.0, bias: float = 128.0) -> np.ndarray:
    """``alpha * img - alpha * blur(img) + bias``, clamped to [0, 255]."""
    img = as_image(img)
    src = img.astype(np.float64)
    blurred = gaussian_blur(src, sigma)
    return quantize(alpha * src - alpha * blurred + bias)


def circle_mask(height: int, width: int) -> np.ndarray:
    """True inside the inscribed circle centred on the image."""
    yy = np.arange(height, dtype=np.float64)[:, None] - (height - 1) / 2
    xx = np.arange(width, dtype=np.float64)[None, :] - (width - 1) / 2
    r = min(height, width) / 2
    return yy * yy + xx * xx <= r * r


def circle_crop(img) -> np.ndarray:
    """Zero every pixel further than ``min(h, w) / 2`` from the image centre."""
    img = as_image(img)
    return np.where(circle_mask(*img.shape[:2])[..., None], img, 0).astype(np.uint8)


def resize(img, size: int) -> np.ndarray:
    """Bilinear resize to ``size x size`` (pixel-centre aligned, no antialiasing)."""
    img = as_image(img)
    if size < 8:
        raise InvalidSize(f"resize target must be >= 8, got {size}")
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img.copy()
    ys = (np.arange(size, dtype=np.float64) + 0.5) * (h / size) - 0.5
    xs = (np.arange(size, dtype=np.float64) + 0.5) * (w / size) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return quantize(kernels.bilinear_sample(img.astype(np.float64), yy, xx, False))


def preprocess(img, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Full pipeline: crop border, resize, Gaussian blend, circle crop."""
    cfg = cfg or PreprocessConfig()
    out = crop_black_border(img, cfg.black_threshold)
    out = resize(out, cfg.target_size)
    out = gaussian_blend(out, cfg.blend_alpha, cfg.sigma, cfg.blend_bias)
    return circle_crop(out)


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(img, path) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(as_image(img), mode="RGB").save(path, format="PNG")
