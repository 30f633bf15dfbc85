"""Pluggable denoisers used for residual extraction.

The default is a classic wavelet-domain filter: an orthogonal Daubechies-4
decomposition whose detail coefficients are shrunk by a locally adaptive
Wiener rule, leaving the approximation band untouched. A separable
Gaussian blur and an identity denoiser are provided for cheap experiments
and tests. All denoisers preserve dimensions and constants.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d, uniform_filter

# Daubechies-4 orthonormal scaling filter (8 taps).
_DB4_LO = np.array(
    [
        0.23037781330885523,
        0.7148465705525415,
        0.6308807679295904,
        -0.02798376941698385,
        -0.18703481171888114,
        0.030841381835986965,
        0.032883011666982945,
        -0.010597401784997278,
    ],
    dtype=np.float64,
)
# Quadrature mirror: g[k] = (-1)^k * h[L-1-k]
_DB4_HI = (_DB4_LO[::-1] * np.where(np.arange(8) % 2 == 0, 1.0, -1.0)).copy()

_WIENER_WINDOWS = (3, 5, 7, 9)


@dataclass(frozen=True)
class DenoiserConfig:
    """Denoiser selection and parameters.

    kind: 'wavelet_wiener', 'gaussian', or 'identity'
    wavelet_levels: decomposition depth; needs min(h, w) >= 2**(levels + 2)
    noise_variance: wavelet shrinkage noise power for [0, 1] luminance
    gaussian_sigma: blur width for the gaussian kind
    """

    kind: str = "wavelet_wiener"
    wavelet_levels: int = 4
    noise_variance: float = 0.0009
    gaussian_sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("wavelet_wiener", "gaussian", "identity"):
            raise ValueError(f"unknown denoiser kind {self.kind!r}")
        if self.wavelet_levels < 1:
            raise ValueError("wavelet_levels must be >= 1")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be > 0")


def _dwt_axis(x: np.ndarray, axis: int):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(8)[None, :]) % n
    windows = x[..., idx]
    lo = windows @ _DB4_LO
    hi = windows @ _DB4_HI
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _idwt_axis(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    out = np.zeros(lo.shape[:-1] + (n,), dtype=np.float64)
    base = 2 * np.arange(half)
    for k in range(8):
        pos = (base + k) % n  # distinct positions for fixed k: safe fancy add
        out[..., pos] += _DB4_LO[k] * lo + _DB4_HI[k] * hi
    return np.moveaxis(out, -1, axis)


def _dwt2(x: np.ndarray):
    lo, hi = _dwt_axis(x, 0)
    ll, lh = _dwt_axis(lo, 1)
    hl, hh = _dwt_axis(hi, 1)
    return ll, (lh, hl, hh)


def _idwt2(ll: np.ndarray, details) -> np.ndarray:
    lh, hl, hh = details
    lo = _idwt_axis(ll, lh, 1)
    hi = _idwt_axis(hl, hh, 1)
    return _idwt_axis(lo, hi, 0)


def wavelet_decompose(image: np.ndarray, levels: int):
    """Periodized orthogonal Daubechies-4 analysis; dims must be divisible
    by 2**levels. Returns (approximation, [finest..coarsest details])."""
    current = image.astype(np.float64)
    bands = []
    for _ in range(levels):
        current, details = _dwt2(current)
        bands.append(details)
    return current, bands


def wavelet_reconstruct(approx: np.ndarray, bands) -> np.ndarray:
    current = approx
    for details in reversed(bands):
        current = _idwt2(current, details)
    return current


def _shrink_detail(coeff: np.ndarray, noise_var: float) -> np.ndarray:
    """Wiener shrinkage with the signal variance taken as the minimum,
    over 3/5/7/9 windows, of the local energy minus the noise power."""
    energy = coeff * coeff
    signal_var = None
    for size in _WIENER_WINDOWS:
        local = np.maximum(uniform_filter(energy, size, mode="constant") - noise_var, 0.0)
        signal_var = local if signal_var is None else np.minimum(signal_var, local)
    return coeff * (signal_var / (signal_var + noise_var))


def denoise_wavelet_wiener(image: np.ndarray, cfg: DenoiserConfig) -> np.ndarray:
    """Wavelet-domain Wiener denoiser (the classic filtering baseline).

    The plane is symmetrically extended to the next multiple of
    2**levels, decomposed, detail-shrunk, reconstructed and cropped back.
    With noise_variance == 0 this is an exact round trip.
    """
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {image.shape}")
    h, w = image.shape
    levels = cfg.wavelet_levels
    if min(h, w) < 2 ** (levels + 2):
        raise ValueError(
            f"plane {image.shape} too small for {levels} wavelet levels"
        )
    block = 2**levels
    pad_h = (-h) % block
    pad_w = (-w) % block
    padded = np.pad(image.astype(np.float64), ((0, pad_h), (0, pad_w)), mode="symmetric")

    approx, bands = wavelet_decompose(padded, levels)
    if cfg.noise_variance > 0:
        bands = [
            tuple(_shrink_detail(c, cfg.noise_variance) for c in details)
            for details in bands
        ]
    restored = wavelet_reconstruct(approx, bands)
    return restored[:h, :w].astype(np.float32)


def denoise_gaussian(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), edges clamped."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {image.shape}")
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = correlate1d(image.astype(np.float64), kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return out.astype(np.float32)


def make_denoiser(cfg: DenoiserConfig):
    """Build the plane -> plane callable described by the config."""
    if cfg.kind == "wavelet_wiener":
        return lambda plane: denoise_wavelet_wiener(plane, cfg)
    if cfg.kind == "gaussian":
        return lambda plane: denoise_gaussian(plane, cfg.gaussian_sigma)
    return lambda plane: plane
