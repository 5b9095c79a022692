"""Synthetic fundus-like images for tests, benchmarks and demos.

A fundus image here is an orange-red disk on a black field, optionally
clipped top and bottom like real camera frames, with small bright spots
standing in for lesions.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .imageops import write_png

_BASE_COLOUR = np.array([200.0, 90.0, 40.0])


def fundus_image(
    rng: np.random.Generator,
    height: int = 96,
    width: int = 128,
    brightness: float = 1.0,
    lesions: int = 0,
    clip_fraction: float = 0.0,
    noise: float = 3.0,
) -> np.ndarray:
    """One synthetic fundus photo as a uint8 (height, width, 3) array."""
    cy = height / 2 + rng.uniform(-0.03, 0.03) * height
    cx = width / 2 + rng.uniform(-0.03, 0.03) * width
    radius = min(height, width) * (0.5 - 0.08) * (1.0 + clip_fraction)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    d = np.hypot(yy - cy, xx - cx) / radius
    inside = d <= 1.0
    vignette = np.clip(1.0 - 0.35 * d**2, 0.0, 1.0)
    img = _BASE_COLOUR * brightness * vignette[..., None]
    spot_r = max(1.0, 0.025 * min(height, width))
    for _ in range(lesions):
        ang, rad = rng.uniform(0, 2 * np.pi), radius * np.sqrt(rng.uniform(0, 0.6))
        sy, sx = cy + rad * np.sin(ang), cx + rad * np.cos(ang)
        spot = np.hypot(yy - sy, xx - sx) <= spot_r
        img[spot] = [250.0, 230.0, 120.0]
    img = img + rng.normal(0.0, noise, img.shape)
    img[~inside] = 0.0
    if clip_fraction > 0:
        band = int(round(height * clip_fraction / 2))
        img[:band] = 0.0
        img[height - band :] = 0.0
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def brightness_dataset(n: int, size: int = 32, classes: int = 3, seed: int = 0):
    """Images whose class is the disk brightness level; returns (uint8 images, labels)."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    levels = np.linspace(0.35, 1.0, classes)
    images = np.stack(
        [fundus_image(rng, size, size, brightness=levels[c] * rng.uniform(0.95, 1.05), noise=4.0) for c in labels]
    )
    return images, labels


def write_fixture(root, per_grade: int = 8, height: int = 96, width: int = 128, seed: int = 0) -> Path:
    """Write ``images/<id>.png`` and ``train.csv`` (id_code,diagnosis); return the manifest path.

    Grade g gets ``3 * g`` lesion spots and a slightly lower brightness.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    rows = []
    for grade in range(5):
        for i in range(per_grade):
            image_id = f"g{grade}_{i:03d}"
            img = fundus_image(rng, height, width, brightness=1.0 - 0.1 * grade, lesions=3 * grade, clip_fraction=0.1)
            write_png(img, root / "images" / f"{image_id}.png")
            rows.append((image_id, grade))
    manifest = root / "train.csv"
    with manifest.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id_code", "diagnosis"])
        w.writerows(rows)
    return manifest
