"""Learned comparator for fingerprint/residual product planes.

A small convolutional binary classifier: 3x3 stride-2 convolutions with
rectifier activations, global average pooling, a linear head and a
sigmoid. Forward, analytic backward and the Adam update are implemented
directly on numpy arrays in double precision, so training is
deterministic for a fixed seed and gradients can be checked against
finite differences exactly.

Training draws (fingerprint, positive residual, negative residual)
triples: the positive comes from the fingerprint's own device, the
negative from a uniformly chosen other device. Each product plane enters
the loss as one binary cross-entropy term.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PROB_EPS = 1e-7  # clamp inside the loss only; raw sigmoid output is open-interval
MIN_INPUT_SIDE = 16


class TrainingDivergence(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class ComparatorModel:
    """Convolution stack parameters; all arrays are float64.

    normalize_input divides each incoming plane by its own RMS (a
    per-sample, batch-independent transform). Product planes of weak
    fingerprints are minuscule in absolute scale, and without a
    pretrained backbone the rectifier stack cannot amplify them within
    desk-scale training budgets; per-plane standardization removes the
    scale while keeping the spatial correlation structure.
    """

    channels: tuple
    conv_w: list  # per layer: (C_out, C_in, 3, 3)
    conv_b: list  # per layer: (C_out,)
    head_w: np.ndarray  # (C_last,)
    head_b: np.ndarray  # shape ()
    normalize_input: bool = True

    @classmethod
    def initialize(cls, channels=(8, 16, 32, 64), seed: int = 0,
                   normalize_input: bool = True) -> "ComparatorModel":
        """Fan-in-scaled normal weights, zero biases, fixed seed."""
        channels = tuple(int(c) for c in channels)
        if len(channels) < 1 or any(c < 1 for c in channels):
            raise ValueError(f"bad channel spec {channels}")
        rng = np.random.default_rng(seed)
        conv_w, conv_b = [], []
        c_in = 1
        for c_out in channels:
            fan_in = c_in * 9
            conv_w.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (c_out, c_in, 3, 3)))
            conv_b.append(np.zeros(c_out))
            c_in = c_out
        head_w = rng.normal(0.0, 1.0 / math.sqrt(c_in), c_in)
        head_b = np.zeros(())
        return cls(channels, conv_w, conv_b, head_w, head_b, normalize_input)

    def params(self) -> list:
        """Parameter arrays in the fixed serialization order."""
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out.extend([w, b])
        out.extend([self.head_w, self.head_b])
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 stride-2 convolution with zero padding 1. Returns (z, windows)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    z = np.einsum("bchwij,ocij->bohw", windows, w, optimize=True)
    z += b[None, :, None, None]
    return z, windows, xp.shape


def _forward_full(model: ComparatorModel, planes: np.ndarray):
    """Forward pass keeping per-layer caches for the backward pass."""
    x = planes[:, None, :, :].astype(np.float64)
    if model.normalize_input:
        rms = np.sqrt(np.mean(x * x, axis=(1, 2, 3), keepdims=True))
        x = x / np.maximum(rms, 1e-12)
    caches = []
    for w, b in zip(model.conv_w, model.conv_b):
        z, windows, xp_shape = _conv_forward(x, w, b)
        x = np.maximum(z, 0.0)
        caches.append((z, windows, xp_shape))
    feats = x.mean(axis=(2, 3))  # (B, C)
    logits = feats @ model.head_w + model.head_b
    probs = _sigmoid(logits)
    return probs, feats, caches


def _check_planes(planes: np.ndarray) -> np.ndarray:
    planes = np.asarray(planes)
    if planes.ndim == 2:
        planes = planes[None]
    if planes.ndim != 3:
        raise ValueError(f"expected (B, H, W) planes, got shape {planes.shape}")
    if planes.shape[1] < MIN_INPUT_SIDE or planes.shape[2] < MIN_INPUT_SIDE:
        raise ValueError(
            f"comparator input must be at least {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}, "
            f"got {planes.shape[1:]}"
        )
    return planes


def forward(model: ComparatorModel, plane: np.ndarray) -> float:
    """Probability that the product plane comes from a matching pair.

    Deterministic, independent of batch composition, strictly inside (0, 1)
    for finite parameters.
    """
    planes = _check_planes(plane)
    probs, _, _ = _forward_full(model, planes)
    return float(probs[0]) if probs.shape[0] == 1 else probs


def bce_pair_loss(p_pos: float, p_neg: float) -> float:
    """Cross-entropy of one (positive, negative) pair of probabilities:
    -log(p_pos) - log(1 - p_neg), with probabilities clamped away from
    0 and 1."""
    p_pos = min(max(float(p_pos), PROB_EPS), 1.0 - PROB_EPS)
    p_neg = min(max(float(p_neg), PROB_EPS), 1.0 - PROB_EPS)
    return -math.log(p_pos) - math.log(1.0 - p_neg)


def backward(model: ComparatorModel, planes: np.ndarray, labels: np.ndarray):
    """Mean binary cross-entropy over the batch and its exact gradients.

    :param planes: (B, H, W) product planes
    :param labels: (B,) values in {0, 1}
    :return: (loss, gradients aligned with model.params(), probabilities)
    """
    planes = _check_planes(planes)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if labels.shape[0] != planes.shape[0]:
        raise ValueError(
            f"{planes.shape[0]} planes but {labels.shape[0]} labels"
        )
    batch = planes.shape[0]
    probs, feats, caches = _forward_full(model, planes)

    clamped = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(
        np.mean(-labels * np.log(clamped) - (1.0 - labels) * np.log(1.0 - clamped))
    )
    # d(loss)/d(logit); the clamp has zero derivative where it is active
    active = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)
    dlogits = np.where(active, clamped - labels, 0.0) / batch

    grad_head_w = feats.T @ dlogits
    grad_head_b = np.array(dlogits.sum())
    dfeats = np.outer(dlogits, model.head_w)

    grads_conv = [None] * len(model.conv_w)
    last = caches[-1][0]
    dx = np.broadcast_to(
        dfeats[:, :, None, None] / (last.shape[2] * last.shape[3]),
        last.shape,
    ).copy()
    for layer in range(len(model.conv_w) - 1, -1, -1):
        z, windows, xp_shape = caches[layer]
        dz = dx * (z > 0)
        grad_w = np.einsum("bohw,bchwij->ocij", dz, windows, optimize=True)
        grad_b = dz.sum(axis=(0, 2, 3))
        grads_conv[layer] = (grad_w, grad_b)
        if layer > 0:
            dwin = np.einsum("bohw,ocij->bchwij", dz, model.conv_w[layer], optimize=True)
            dxp = np.zeros(xp_shape)
            n_h, n_w = dz.shape[2], dz.shape[3]
            for i in range(3):
                for j in range(3):
                    dxp[:, :, i : i + 2 * n_h : 2, j : j + 2 * n_w : 2] += dwin[..., i, j]
            dx = dxp[:, :, 1:-1, 1:-1]

    grads = []
    for gw, gb in grads_conv:
        grads.extend([gw, gb])
    grads.extend([grad_head_w, grad_head_b])
    return loss, grads, probs


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params, grads, state: AdamState, learning_rate: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    b1, b2 = betas
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(
                f"non-finite gradient for parameter {i} (shape {np.shape(g)})"
            )
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for comparator training; defaults are desk-scale."""

    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    steps_per_epoch: int = None  # None: ceil(#pretrain images / batch_size)
    crop_size: int = 64
    channels: tuple = (8, 16, 32, 64)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.crop_size < MIN_INPUT_SIDE:
            raise ValueError(f"crop_size must be >= {MIN_INPUT_SIDE}")


@dataclass(frozen=True)
class TrainSample:
    """One sampled triple: fingerprint device, positive and negative image."""

    device_id: str
    positive_id: str
    negative_device_id: str
    negative_id: str

    def __post_init__(self):
        if self.negative_device_id == self.device_id:
            raise ValueError("negative must come from a different device")


@dataclass
class TrainingData:
    """Precomputed per-level fingerprints and residuals of the pretrain split.

    fingerprints: device_id -> [plane per resolution level]
    residuals: device_id -> list of (image_id, [plane per level])
    """

    fingerprints: dict
    residuals: dict
    devices: list = field(init=False)

    def __post_init__(self):
        if set(self.fingerprints) != set(self.residuals):
            raise ValueError("fingerprint and residual device sets differ")
        self.devices = sorted(self.fingerprints)
        for dev in self.devices:
            if not self.residuals[dev]:
                raise ValueError(f"device {dev!r} has no training residuals")

    @property
    def n_images(self) -> int:
        return sum(len(v) for v in self.residuals.values())

    @property
    def n_levels(self) -> int:
        return len(next(iter(self.fingerprints.values())))


def sample_batch(data: TrainingData, rng: np.random.Generator,
                 batch_size: int) -> list:
    """Draw training triples: uniform device, uniform positive from that
    device, uniform negative device among the other d-1, uniform negative
    image from it."""
    devices = data.devices
    d = len(devices)
    if d < 2:
        raise ValueError(f"need at least 2 devices to sample negatives, got {d}")
    batch = []
    for _ in range(batch_size):
        i = int(rng.integers(d))
        dev = devices[i]
        pos_pool = data.residuals[dev]
        pos_id, _ = pos_pool[int(rng.integers(len(pos_pool)))]
        j = int(rng.integers(d - 1))
        neg_dev = devices[j if j < i else j + 1]
        neg_pool = data.residuals[neg_dev]
        neg_id, _ = neg_pool[int(rng.integers(len(neg_pool)))]
        batch.append(TrainSample(dev, pos_id, neg_dev, neg_id))
    return batch


def _crop(plane: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = plane.shape
    ch, cw = min(size, h), min(size, w)
    y = int(rng.integers(h - ch + 1))
    x = int(rng.integers(w - cw + 1))
    return plane[y : y + ch, x : x + cw]


def train(data: TrainingData, cfg: TrainConfig):
    """Train the comparator on pretrain-split product planes.

    Each step samples batch_size triples, picks a resolution level per
    triple, crops the two product planes and takes one Adam step on the
    mean cross-entropy. The returned trace holds (epoch, step, pair_loss)
    with pair_loss the mean positive+negative loss per triple.

    :return: (model, trace)
    """
    model = ComparatorModel.initialize(channels=cfg.channels, seed=cfg.seed)
    params = model.params()
    state = AdamState.for_params(params)
    rng = np.random.default_rng([cfg.seed, 1])
    steps = cfg.steps_per_epoch
    if steps is None:
        steps = max(1, math.ceil(data.n_images / cfg.batch_size))

    residual_index = {
        dev: {img_id: planes for img_id, planes in pool}
        for dev, pool in data.residuals.items()
    }
    # one batch must stack to a single shape even when levels differ
    crop = cfg.crop_size
    for planes_per_level in data.fingerprints.values():
        for plane in planes_per_level:
            crop = min(crop, plane.shape[0], plane.shape[1])
    trace = []
    for epoch in range(cfg.epochs):
        for step in range(steps):
            batch = sample_batch(data, rng, cfg.batch_size)
            planes, labels = [], []
            for sample in batch:
                level = int(rng.integers(data.n_levels))
                fp = data.fingerprints[sample.device_id][level]
                pos = residual_index[sample.device_id][sample.positive_id][level]
                neg = residual_index[sample.negative_device_id][sample.negative_id][level]
                planes.append(_crop(fp * pos, crop, rng))
                labels.append(1.0)
                planes.append(_crop(fp * neg, crop, rng))
                labels.append(0.0)
            loss, grads, _ = backward(model, np.stack(planes), np.array(labels))
            pair_loss = 2.0 * loss
            if not math.isfinite(pair_loss):
                raise TrainingDivergence(
                    f"loss diverged at epoch {epoch} step {step}", trace=trace
                )
            adam_step(params, grads, state, cfg.learning_rate,
                      cfg.adam_betas, cfg.adam_eps)
            trace.append((epoch, step, pair_loss))
    return model, trace


def write_loss_csv(trace, path: str) -> None:
    import csv

    from .util import fmt9

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss"])
        for epoch, step, loss in trace:
            writer.writerow([epoch, step, fmt9(loss)])
