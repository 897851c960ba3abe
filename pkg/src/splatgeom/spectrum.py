"""2D DFT and the spectral statistics linking high-pass energy to edge counts.

Frequencies are in normalized cycles/pixel (Nyquist = 0.5) so thresholds do
not depend on image size.
"""

from dataclasses import dataclass

import numpy as np

from .canny import canny
from .errors import BadThreshold, DegenerateCorpus, SplatGeomError


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x, inverse=False):
    """Iterative Cooley-Tukey FFT along the last axis (length must be a power of two)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    sign = 1.0 if inverse else -1.0
    x = x[..., _bit_reverse(n)]
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = x.reshape(x.shape[:-1] + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(x.shape)
        m *= 2
    return x


def dft_direct(x, inverse=False):
    """O(n^2) DFT along the last axis by explicit matrix product."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    W = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return x @ W.T


def _dft_axis_last(x, inverse=False):
    return fft_radix2(x, inverse) if _is_pow2(x.shape[-1]) else dft_direct(x, inverse)


@dataclass(frozen=True, eq=False)
class Spectrum2D:
    coefficients: np.ndarray  # (H, W) complex, DC at [0, 0]

    @property
    def height(self):
        return self.coefficients.shape[0]

    @property
    def width(self):
        return self.coefficients.shape[1]

    def inverse(self):
        """Real part of the inverse transform."""
        x = _dft_axis_last(self.coefficients, inverse=True)
        x = _dft_axis_last(x.T, inverse=True).T
        return (x / (self.height * self.width)).real


def dft2(image, force_direct=False):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 1:
        raise SplatGeomError(f"dft2 needs a non-empty 2D array, got shape {image.shape}")
    step = dft_direct if force_direct else _dft_axis_last
    out = step(image)
    out = step(out.T).T
    return Spectrum2D(out)


def radii(height, width):
    """Radial frequency of every bin in cycles/pixel."""
    fv = np.fft.fftfreq(height)[:, None]
    fu = np.fft.fftfreq(width)[None, :]
    return np.hypot(fv, fu)


def naive_magnitude_stat(spec):
    """Radius-weighted spectral magnitude over the first quadrant, normalized by H*W.

    Each bin folds onto the quadrant at (|f_u|, |f_v|); a real image's spectrum
    is conjugate-symmetric, so the four-fold reflection carries every bin and
    the quadrant sum is a quarter of the full-plane sum. DC has radius 0.
    """
    rho = radii(spec.height, spec.width)
    mag = np.abs(spec.coefficients)
    return float((rho * mag).sum() / (4.0 * spec.height * spec.width))


def highpass_energy(spec, T=0.1):
    """Energy of the ideal high-passed image (bins with radius >= T), via Parseval."""
    if not 0 <= T < 0.5:
        raise BadThreshold(f"T must lie in [0, 0.5), got {T}")
    rho = radii(spec.height, spec.width)
    power = np.abs(spec.coefficients) ** 2
    return float(power[rho >= T].sum() / (spec.height * spec.width))


def parseval_rel_error(image):
    image = np.asarray(image, dtype=np.float64)
    spatial = float((image ** 2).sum())
    spec = dft2(image)
    freq = float((np.abs(spec.coefficients) ** 2).sum() / image.size)
    return abs(spatial - freq) / max(spatial, np.finfo(float).tiny)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateCorpus("zero variance in a correlation series")
    return float(np.corrcoef(x, y)[0, 1])


def image_statistics(image, T=0.1, sigma=1.0, low=0.1, high=0.3):
    spec = dft2(image)
    return {
        "edge_count": int(canny(image, sigma, low, high).sum()),
        "highpass_energy": highpass_energy(spec, T),
        "naive_stat": naive_magnitude_stat(spec),
    }


def edge_energy_correlation(corpus, T=0.1, sigma=1.0, low=0.1, high=0.3, min_size=10):
    """Pearson r between Canny edge counts and high-pass energy over a corpus."""
    corpus = list(corpus)
    if len(corpus) < min_size:
        raise DegenerateCorpus(f"corpus needs at least {min_size} images, got {len(corpus)}")
    stats = [image_statistics(img, T, sigma, low, high) for img in corpus]
    return pearson([s["edge_count"] for s in stats], [s["highpass_energy"] for s in stats])


# -- generated corpora -------------------------------------------------------

def square_corpus(count=50, size=256, min_perimeter=16, max_perimeter=512):
    """White squares on black whose perimeters step evenly from min to max."""
    sides = np.round(np.linspace(min_perimeter, max_perimeter, count) / 4).astype(int)
    if sides.max() > size - 4:
        raise ValueError("image too small for the largest square")
    corpus = []
    for s in sides:
        img = np.zeros((size, size))
        r0 = (size - s) // 2
        img[r0:r0 + s, r0:r0 + s] = 1.0
        corpus.append(img)
    return corpus


def noise_corpus(count=20, size=64, seed=0, max_amplitude=0.5):
    """Uniform white noise around 0.5 with linearly increasing amplitude."""
    rng = np.random.default_rng(seed)
    amps = np.linspace(max_amplitude / count, max_amplitude, count)
    return [0.5 + a * (rng.random((size, size)) - 0.5) for a in amps]


def power_law_image(size=64, exponent=2.0, seed=0):
    """Random-phase field with power spectrum ~ 1/f^exponent, scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    rho = radii(size, size)
    amp = np.zeros_like(rho)
    amp[rho > 0] = rho[rho > 0] ** (-exponent / 2)
    noise = np.fft.fft2(rng.standard_normal((size, size)))
    field = np.fft.ifft2(noise * amp).real
    field -= field.min()
    return field / field.max()
