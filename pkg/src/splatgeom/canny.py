import math

import numpy as np
from scipy import ndimage

from .errors import BadThresholds


def gaussian_kernel(sigma):
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gradients(image, sigma):
    """Blur with a separable Gaussian (radius ceil(3 sigma)) and take Sobel derivatives."""
    k = gaussian_kernel(sigma)
    smoothed = ndimage.correlate1d(image, k, axis=0, mode="nearest")
    smoothed = ndimage.correlate1d(smoothed, k, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    return gx, gy


# (d_row, d_col) of the positive-direction neighbour for each gradient bin
_BIN_OFFSETS = [(0, 1), (1, 1), (1, 0), (1, -1)]


def non_max_suppression(mag, gx, gy):
    """Keep pixels that are local maxima along the gradient, quantized into 4 direction bins.

    A pixel must strictly exceed its backward neighbour and be no smaller than its
    forward one, so a plateau of two equal maxima straddling a step keeps one pixel.
    """
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dr, dc) in enumerate(_BIN_OFFSETS):
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        back = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (bins == b) & (mag > back) & (mag >= fwd)
    return keep & (mag > 0)


def hysteresis(candidates, mag, low, high):
    """8-connected hysteresis: weak components survive only if they touch a strong pixel."""
    weak = candidates & (mag >= low)
    strong = candidates & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros_like(weak)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[labels[strong]] = True
    has_strong[0] = False
    return has_strong[labels]


def canny(image, sigma=1.0, low=0.1, high=0.3):
    """Boolean edge image of a grayscale array in [0, 1]."""
    if not 0 < low < high:
        raise BadThresholds(f"need 0 < low < high, got low={low}, high={high}")
    if sigma <= 0:
        raise BadThresholds(f"sigma must be positive, got {sigma}")
    image = np.asarray(image, dtype=np.float64)
    gx, gy = gradients(image, sigma)
    # rounding makes NMS ties robust to float noise (e.g. a constant offset)
    mag = np.round(np.hypot(gx, gy), 12)
    return hysteresis(non_max_suppression(mag, gx, gy), mag, low, high)
