"""Geometric preprocessing: reflect padding to square and bicubic resampling.

Square padding anchors the original content at the top-left corner and
mirrors samples across the edge without repeating the edge pixel.
Resampling uses the Catmull-Rom cubic kernel (a = -0.5) over half-pixel
centers with index clamping at the borders; resizing to the source size
is an exact identity.
"""

from dataclasses import dataclass

import numpy as np

_A = -0.5  # cubic kernel sharpness


@dataclass(frozen=True)
class ResolutionSpec:
    """Ordered set of (height, width) levels used for multi-scale scoring.

    The per-level weight is max(h_i, w_i) / max_j(max(h_j, w_j)), so the
    largest level always carries weight 1.0.
    """

    levels: tuple

    def __post_init__(self):
        levels = tuple((int(h), int(w)) for h, w in self.levels)
        if len(levels) < 1:
            raise ValueError("at least one resolution level is required")
        for h, w in levels:
            if h <= 0 or w <= 0:
                raise ValueError(f"resolution levels must be positive, got {(h, w)}")
        object.__setattr__(self, "levels", levels)

    @property
    def count(self) -> int:
        return len(self.levels)

    def weights(self) -> np.ndarray:
        longest = np.array([max(h, w) for h, w in self.levels], dtype=np.float64)
        return longest / longest.max()

    @classmethod
    def parse(cls, text: str) -> "ResolutionSpec":
        """Parse 'h1xw1,h2xw2,...' (e.g. '192x192,256x256')."""
        levels = []
        for chunk in text.split(","):
            h, _, w = chunk.strip().lower().partition("x")
            if not h or not w:
                raise ValueError(f"bad resolution token {chunk!r}, expected HxW")
            levels.append((int(h), int(w)))
        return cls(tuple(levels))


def pad_reflect_square(image: np.ndarray) -> np.ndarray:
    """Pad a 2-D plane to max(h, w) x max(h, w) with edge-exclusive mirroring.

    The original content stays at the top-left; a 2x3 input therefore gains
    one bottom row equal to row 0 (mirror across row 1, excluding it).
    Already-square inputs are returned unchanged.
    """
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {image.shape}")
    h, w = image.shape
    if h < 2 or w < 2:
        raise ValueError(f"cannot reflect-pad degenerate plane of shape {image.shape}")
    side = max(h, w)
    if h == w:
        return image
    return np.pad(image, ((0, side - h), (0, side - w)), mode="reflect")


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Kernel values at tap distances (1+t, t, 1-t, 2-t) for each t in [0,1)."""
    a = _A
    d0 = 1.0 + t
    d3 = 2.0 - t
    w0 = a * d0**3 - 5.0 * a * d0**2 + 8.0 * a * d0 - 4.0 * a
    w1 = (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    u = 1.0 - t
    w2 = (a + 2.0) * u**3 - (a + 3.0) * u**2 + 1.0
    w3 = a * d3**3 - 5.0 * a * d3**2 + 8.0 * a * d3 - 4.0 * a
    return np.stack([w0, w1, w2, w3], axis=-1)


def _resize_axis(data: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    old_len = data.shape[axis]
    if new_len == old_len:
        return data
    # half-pixel center mapping
    src = (np.arange(new_len, dtype=np.float64) + 0.5) * (old_len / new_len) - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    weights = _cubic_weights(t)  # (new_len, 4)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    taps = np.clip(taps, 0, old_len - 1)

    moved = np.moveaxis(data, axis, 0)
    out = np.zeros((new_len,) + moved.shape[1:], dtype=np.float64)
    for i in range(4):
        out += weights[:, i].reshape((-1,) + (1,) * (moved.ndim - 1)) * moved[taps[:, i]]
    return np.moveaxis(out, 0, axis)


def resize_bicubic(image: np.ndarray, target, clip=(0.0, 1.0)) -> np.ndarray:
    """Resample a 2-D plane to target (h, w) with the Catmull-Rom kernel.

    :param image: 2-D plane
    :param target: (height, width), both >= 4
    :param clip: output value bounds; pass None for unbounded data
    :return: float32 plane of shape target; a copy of the input when the
        target equals the source size
    """
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {image.shape}")
    th, tw = int(target[0]), int(target[1])
    if th < 4 or tw < 4:
        raise ValueError(f"target must be at least 4x4, got {(th, tw)}")
    if (th, tw) == image.shape:
        return image.astype(np.float32, copy=True)
    out = _resize_axis(image.astype(np.float64), th, axis=0)
    out = _resize_axis(out, tw, axis=1)
    if clip is not None:
        np.clip(out, clip[0], clip[1], out=out)
    return out.astype(np.float32)
