"""PNG ingestion and export for luminance planes.

8-bit data is normalized by 255, 16-bit by 65535; RGB inputs are collapsed
to luminance. Planes are written as 16-bit grayscale so the faint sensor
pattern survives quantization.
"""

import numpy as np
from PIL import Image

from .fingerprint import to_luminance


def load_plane(path: str) -> np.ndarray:
    """Read a PNG as a float32 luminance plane in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if mode == "L":
        return (arr.astype(np.float64) / 255.0).astype(np.float32)
    if mode in ("I;16", "I"):
        return (arr.astype(np.float64) / 65535.0).astype(np.float32)
    if mode == "RGB":
        return to_luminance(arr.astype(np.float64) / 255.0)
    if mode == "RGBA":
        return to_luminance(arr[:, :, :3].astype(np.float64) / 255.0)
    raise ValueError(f"unsupported PNG mode {mode!r} in {path}")


def save_plane_u16(path: str, plane: np.ndarray) -> None:
    """Write a [0, 1] plane as a 16-bit grayscale PNG."""
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    quantized = np.clip(np.rint(plane.astype(np.float64) * 65535.0), 0, 65535)
    Image.fromarray(quantized.astype(np.uint16)).save(path, format="PNG")
