"""Noise-residual extraction and sensor fingerprint estimation.

A residual is the difference between an image and its denoised version;
averaging residuals over several images of the same sensor suppresses
scene leakage and random noise and leaves the fixed sensor pattern.
An adaptive Wiener filter cleans the averaged estimate.

Planes are stored in float32; every accumulation runs in float64.
"""

from dataclasses import dataclass, replace

import numpy as np

BT601_WEIGHTS = (0.299, 0.587, 0.114)


def to_luminance(rgb: np.ndarray, weights=BT601_WEIGHTS) -> np.ndarray:
    """Collapse an (H, W, 3) image in [0, 1] to a single luminance plane.

    :param rgb: 3-channel array, channels last
    :param weights: per-channel weights, must sum to 1
    :return: float32 plane in [0, 1]
    """
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) input, got shape {rgb.shape}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"channel weights must sum to 1, got {weights}")
    plane = rgb.astype(np.float64) @ w
    return plane.astype(np.float32)


@dataclass(frozen=True)
class Residual:
    """Noise residual of one image: zero-centered, unbounded values."""

    data: np.ndarray  # float32, 2-D
    source_id: str = ""

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class Fingerprint:
    """Per-sensor pattern estimate with provenance metadata."""

    sensor_id: str
    data: np.ndarray  # float32, 2-D
    n_images: int
    wiener_applied: bool = False
    resolution_tag: tuple = None

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("a fingerprint needs at least one source residual")
        if self.resolution_tag is None:
            object.__setattr__(self, "resolution_tag", tuple(self.data.shape))

    @property
    def shape(self):
        return self.data.shape


def extract_residual(image: np.ndarray, denoiser, source_id: str = "") -> Residual:
    """Compute image minus its denoised version.

    :param image: 2-D luminance plane
    :param denoiser: callable mapping a plane to a same-shaped denoised plane
    :param source_id: identifier carried along for bookkeeping
    """
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {image.shape}")
    image32 = image.astype(np.float32, copy=False)
    denoised = np.asarray(denoiser(image32))
    if denoised.shape != image32.shape:
        raise ValueError(
            f"denoiser changed dimensions: {image32.shape} -> {denoised.shape}"
        )
    return Residual(data=image32 - denoised.astype(np.float32), source_id=source_id)


def estimate_fingerprint(residuals, sensor_id: str) -> Fingerprint:
    """Average residuals into a fingerprint estimate.

    Residuals are sorted by source_id and summed left-to-right in float64,
    so the result is exactly independent of the input ordering.
    """
    residuals = list(residuals)
    if not residuals:
        raise ValueError("cannot estimate a fingerprint from zero residuals")
    shape = residuals[0].data.shape
    for r in residuals:
        if r.data.shape != shape:
            raise ValueError(
                f"residual dimension mismatch: {r.data.shape} vs {shape}"
            )
    ordered = sorted(residuals, key=lambda r: r.source_id)
    acc = np.zeros(shape, dtype=np.float64)
    for r in ordered:
        acc += r.data.astype(np.float64)
    acc /= len(ordered)
    return Fingerprint(
        sensor_id=sensor_id,
        data=acc.astype(np.float32),
        n_images=len(ordered),
        wiener_applied=False,
        resolution_tag=tuple(shape),
    )


def _local_stats(data: np.ndarray, window: int):
    """Mean and variance over the window clipped to the plane borders.

    Uses integral images with exact per-pixel sample counts, so border
    pixels see smaller neighborhoods instead of synthetic padding.
    """
    h, w = data.shape
    r = window // 2
    s = np.zeros((h + 1, w + 1), dtype=np.float64)
    q = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(data, axis=0), axis=1, out=s[1:, 1:])
    np.cumsum(np.cumsum(data * data, axis=0), axis=1, out=q[1:, 1:])

    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - r, 0, h)[:, None]
    y1 = np.clip(ys + r + 1, 0, h)[:, None]
    x0 = np.clip(xs - r, 0, w)[None, :]
    x1 = np.clip(xs + r + 1, 0, w)[None, :]

    def box(table):
        return table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]

    count = (y1 - y0) * (x1 - x0)
    mean = box(s) / count
    var = box(q) / count - mean * mean
    return mean, np.maximum(var, 0.0)


def wiener_postfilter(fp: Fingerprint, window: int = 3, noise_variance: float = None) -> Fingerprint:
    """Adaptive Wiener shrinkage of a fingerprint toward its local mean.

    Each pixel becomes mu + max(var - nv, 0) / var * (x - mu), with mu and
    var taken over the local window. When noise_variance is omitted it is
    set to the median of the local variances.

    :param fp: fingerprint with wiener_applied == False
    :param window: odd window size >= 3
    :param noise_variance: noise power; must be positive when supplied
    """
    if fp.wiener_applied:
        raise ValueError(f"fingerprint {fp.sensor_id!r} is already post-filtered")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if noise_variance is not None and noise_variance <= 0:
        raise ValueError(f"noise_variance must be positive, got {noise_variance}")

    data = fp.data.astype(np.float64)
    mean, var = _local_stats(data, window)
    nv = float(np.median(var)) if noise_variance is None else float(noise_variance)
    gain = np.zeros_like(var)
    np.divide(np.maximum(var - nv, 0.0), var, out=gain, where=var > 0)
    out = mean + gain * (data - mean)
    return replace(fp, data=out.astype(np.float32), wiener_applied=True)
