"""Image quality metrics on the 0-255 scale: PSNR, SSIM and interpolation
error (mean absolute difference)."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .image import Image, gray_array

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEAK = 255.0


def _check(i: Image, j: Image):
    if i.shape != j.shape:
        raise ValueError(f"image shape mismatch {i.shape} vs {j.shape}")


def mse(i: Image, j: Image) -> float:
    _check(i, j)
    d = (i.data.astype(np.float64) - j.data.astype(np.float64)) * PEAK
    return float(np.mean(d * d))


def psnr(i: Image, j: Image) -> float:
    """``10 log10(255^2 / MSE)`` over all samples; ``inf`` for identical images."""
    err = mse(i, j)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / err)


def interpolation_error(i: Image, j: Image) -> float:
    _check(i, j)
    d = (i.data.astype(np.float64) - j.data.astype(np.float64)) * PEAK
    return float(np.mean(np.abs(d)))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-t * t / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim_map(x: np.ndarray, y: np.ndarray, win_size: int = SSIM_WINDOW,
             sigma: float = SSIM_SIGMA) -> np.ndarray:
    """SSIM at every position where the Gaussian window fits inside the
    image. ``x`` and ``y`` are 2-D arrays on the 0-255 scale."""
    h, w = x.shape
    if win_size % 2 == 0:
        raise ValueError("SSIM window size must be odd")
    if h < win_size or w < win_size:
        raise ValueError(f"image {w}x{h} smaller than the {win_size}x{win_size} SSIM window")
    g = _gaussian_window(win_size, sigma)
    r = win_size // 2

    def filt(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="constant")
        a = ndimage.correlate1d(a, g, axis=1, mode="constant")
        return a[r:h - r, r:w - r]

    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    # l * c * s with C3 = C2 / 2 collapses to this two-factor form
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(i: Image, j: Image, win_size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean structural similarity of the luma planes."""
    _check(i, j)
    x = gray_array(i) * PEAK
    y = gray_array(j) * PEAK
    return float(ssim_map(x, y, win_size, sigma).mean())
