"""numpy implementations of the pixel kernels.

Arithmetic is ordered exactly as in ``_ckernels.pyx`` so both backends
produce bit-identical float64 output.
"""
import numpy as np


def separable_blur(img, kernel):
    """Convolve ``img`` (H, W, C float64) with ``kernel`` along rows then columns.

    Borders are edge-clamped.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    r = len(kernel) // 2
    h, w = img.shape[:2]

    padded = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="edge")
    tmp = np.zeros_like(img)
    for j in range(len(kernel)):
        tmp += kernel[j] * padded[j : j + h]

    padded = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for j in range(len(kernel)):
        out += kernel[j] * padded[:, j : j + w]
    return out


def bilinear_sample(img, ys, xs, zero_fill):
    """Sample ``img`` (H, W, C float64) at fractional coordinates.

    With ``zero_fill`` the image is treated as 0 outside its frame; otherwise
    coordinates are clamped to the frame.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if not zero_fill:
        ys = np.clip(ys, 0.0, h - 1.0)
        xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    if zero_fill:
        y1, x1 = y0 + 1, x0 + 1
    else:
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)

    def fetch(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside[..., None], vals, 0.0)

    p00, p01 = fetch(y0, x0), fetch(y0, x1)
    p10, p11 = fetch(y1, x0), fetch(y1, x1)
    return (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) + fy * ((1.0 - fx) * p10 + fx * p11)
