"""Bit-exact binary persistence for fingerprints and model checkpoints.

Both formats are little-endian, versioned, and validated before any
payload is materialized; loads either return complete objects or raise.
Files are written to a temp path and renamed, so a crashed writer never
leaves a truncated file under the final name.
"""

import json
import struct

import numpy as np

from .comparator import AdamState, ComparatorModel
from .fingerprint import Fingerprint
from .util import atomic_write_bytes

FP_MAGIC = b"PRNF"
MODEL_MAGIC = b"PRNM"
VERSION = 1


class StoreFormatError(ValueError):
    """Malformed, truncated or unsupported store file."""


def _need(buf: bytes, offset: int, count: int, what: str) -> None:
    if offset + count > len(buf):
        raise StoreFormatError(
            f"truncated file: need {count} bytes for {what} at offset {offset}, "
            f"have {len(buf) - offset}"
        )


def save_fingerprints(fingerprints, path: str) -> None:
    """Serialize fingerprints; an empty collection writes a valid header."""
    fingerprints = list(fingerprints)
    chunks = [FP_MAGIC, struct.pack("<BI", VERSION, len(fingerprints))]
    for fp in fingerprints:
        sid = fp.sensor_id.encode("utf-8")
        h, w = fp.data.shape
        tag_h, tag_w = fp.resolution_tag
        chunks.append(struct.pack("<H", len(sid)))
        chunks.append(sid)
        chunks.append(struct.pack("<IIIBII", h, w, fp.n_images,
                                  int(fp.wiener_applied), tag_h, tag_w))
        chunks.append(np.ascontiguousarray(fp.data, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_fingerprints(path: str) -> list:
    with open(path, "rb") as fh:
        buf = fh.read()
    _need(buf, 0, 9, "header")
    if buf[:4] != FP_MAGIC:
        raise StoreFormatError(f"bad magic {buf[:4]!r}, expected {FP_MAGIC!r}")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise StoreFormatError(f"unsupported fingerprint store version {version}")
    offset = 9
    out = []
    for i in range(count):
        _need(buf, offset, 2, f"entry {i} id length")
        (sid_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        _need(buf, offset, sid_len + 21, f"entry {i} metadata")
        sid = buf[offset : offset + sid_len].decode("utf-8")
        offset += sid_len
        h, w, n_images, wiener, tag_h, tag_w = struct.unpack_from("<IIIBII", buf, offset)
        offset += 21
        payload = 4 * h * w
        _need(buf, offset, payload, f"entry {i} ({sid}) payload")
        data = np.frombuffer(buf, dtype="<f4", count=h * w, offset=offset)
        offset += payload
        out.append(Fingerprint(
            sensor_id=sid,
            data=data.reshape(h, w).copy(),
            n_images=n_images,
            wiener_applied=bool(wiener),
            resolution_tag=(tag_h, tag_w),
        ))
    if offset != len(buf):
        raise StoreFormatError(f"{len(buf) - offset} trailing bytes after last entry")
    return out


def save_model(model: ComparatorModel, path: str, optimizer: AdamState = None,
               seed: int = 0, config_snapshot: dict = None) -> None:
    """Checkpoint the comparator: architecture, float64 parameters in the
    fixed order, optional optimizer state, training seed and config."""
    meta = json.dumps(config_snapshot or {}, sort_keys=True).encode("utf-8")
    chunks = [MODEL_MAGIC, struct.pack("<BI", VERSION, len(model.channels))]
    for c in model.channels:
        chunks.append(struct.pack("<I", c))
    chunks.append(struct.pack("<BBqI", int(model.normalize_input),
                              int(optimizer is not None), seed, len(meta)))
    chunks.append(meta)
    for p in model.params():
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    if optimizer is not None:
        chunks.append(struct.pack("<q", optimizer.t))
        for arrs in (optimizer.m, optimizer.v):
            for a in arrs:
                chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def _param_shapes(channels):
    shapes = []
    c_in = 1
    for c_out in channels:
        shapes.append((c_out, c_in, 3, 3))
        shapes.append((c_out,))
        c_in = c_out
    shapes.append((c_in,))
    shapes.append(())
    return shapes


def load_model(path: str, require_optimizer: bool = False):
    """Restore a checkpoint.

    :param require_optimizer: refuse checkpoints saved without optimizer
        state (needed to resume training)
    :return: (model, optimizer state or None, {'seed', 'config_snapshot'})
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    _need(buf, 0, 9, "header")
    if buf[:4] != MODEL_MAGIC:
        raise StoreFormatError(f"bad magic {buf[:4]!r}, expected {MODEL_MAGIC!r}")
    version, n_layers = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise StoreFormatError(f"unsupported checkpoint version {version}")
    offset = 9
    _need(buf, offset, 4 * n_layers, "architecture descriptor")
    channels = tuple(
        struct.unpack_from("<I", buf, offset + 4 * i)[0] for i in range(n_layers)
    )
    offset += 4 * n_layers
    _need(buf, offset, 14, "checkpoint metadata")
    normalize, has_opt, seed, meta_len = struct.unpack_from("<BBqI", buf, offset)
    offset += 14
    _need(buf, offset, meta_len, "config snapshot")
    config_snapshot = json.loads(buf[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len

    shapes = _param_shapes(channels)
    n_params = sum(int(np.prod(s)) for s in shapes)
    expected = 8 * n_params * (3 if has_opt else 1) + (8 if has_opt else 0)
    if len(buf) - offset != expected:
        raise StoreFormatError(
            f"payload is {len(buf) - offset} bytes, descriptor implies {expected}"
        )

    def read_arrays():
        nonlocal offset
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            a = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            arrays.append(a.reshape(shape).copy())
        return arrays

    params = read_arrays()
    conv_w = params[0:-2:2]
    conv_b = params[1:-2:2]
    model = ComparatorModel(channels=channels, conv_w=conv_w, conv_b=conv_b,
                            head_w=params[-2], head_b=params[-1],
                            normalize_input=bool(normalize))

    optimizer = None
    if has_opt:
        (t,) = struct.unpack_from("<q", buf, offset)
        offset += 8
        optimizer = AdamState(m=read_arrays(), v=read_arrays(), t=t)
    elif require_optimizer:
        raise StoreFormatError(
            "checkpoint has no optimizer state; cannot resume training"
        )
    return model, optimizer, {"seed": seed, "config_snapshot": config_snapshot}
