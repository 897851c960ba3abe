"""Rendering losses and image-quality metrics (L1, SSIM / D-SSIM, PSNR)."""

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _window():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return w / w.sum()


def _blur(x, w):
    x = ndimage.correlate1d(x, w, axis=0, mode="reflect")
    return ndimage.correlate1d(x, w, axis=1, mode="reflect")


def _ssim_channel(x, y, w):
    mx, my = _blur(x, w), _blur(y, w)
    sxx = _blur(x * x, w) - mx * mx
    syy = _blur(y * y, w) - my * my
    sxy = _blur(x * y, w) - mx * my
    s = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
    pad = SSIM_WINDOW // 2
    return s[pad:-pad, pad:-pad].mean()


def ssim(a, b):
    """Mean SSIM over valid (border-cropped) pixels, averaged across channels."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) <= SSIM_WINDOW:
        raise DimensionMismatch(f"images must exceed {SSIM_WINDOW} px per side")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    w = _window()
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], w) for c in range(a.shape[2])]))


def dssim(a, b):
    return (1.0 - ssim(a, b)) / 2.0


def l1(a, b):
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def psnr(a, b):
    """PSNR for data range 1; identical images give +inf."""
    a, b = _pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
