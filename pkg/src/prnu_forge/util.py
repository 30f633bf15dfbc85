"""Small shared helpers: deterministic serialization and stable hashing."""

import hashlib
import json
import os
import tempfile

import numpy as np


def sig9(x: float) -> float:
    """Round a float to 9 significant digits (the export precision)."""
    return float(f"{float(x):.9g}")


def fmt9(x: float) -> str:
    """Format a float with 9 significant digits for CSV output."""
    return f"{float(x):.9g}"


def _round_floats(obj):
    if isinstance(obj, float):
        return sig9(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return sig9(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def dump_json(obj, path: str) -> None:
    """Write JSON deterministically: sorted keys, 9-significant-digit floats,
    atomic replace so readers never observe a partial file."""
    text = json.dumps(_round_floats(obj), sort_keys=True, indent=2)
    atomic_write_bytes(path, text.encode("utf-8") + b"\n")


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write bytes via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def stable_id_hash(identifier: str) -> int:
    """Map an opaque string id to a stable 64-bit integer (for seeding)."""
    digest = hashlib.sha256(identifier.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
