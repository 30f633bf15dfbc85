"""Similarity scoring between fingerprints and residuals.

Covers plain normalized cross-correlation, elementwise-product planes for
the neural comparator, weighted multi-scale aggregation, the fused
correlation+comparator score, and 1:N gallery ranking.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fingerprint import Fingerprint, Residual
from .resample import ResolutionSpec
from .util import fmt9


class ConstantInputWarning(RuntimeWarning):
    """Raised (as a warning) when a correlation input has zero variance."""


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation of two equal-sized planes.

    Both planes are centered by their means; the score is the dot product
    over the product of the centered norms, in [-1, 1]. A constant input
    has no direction to correlate with: the result is 0.0 and a
    ConstantInputWarning is emitted instead of raising, so sweeps over
    degenerate frames keep going.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64).ravel()
    b64 = b.astype(np.float64).ravel()
    if a64.min() == a64.max() or b64.min() == b64.max():
        warnings.warn("constant input to ncc, returning 0", ConstantInputWarning)
        return 0.0
    ac = a64 - a64.mean()
    bc = b64 - b64.mean()
    denom = np.linalg.norm(ac) * np.linalg.norm(bc)
    if denom == 0.0:
        warnings.warn("zero-norm input to ncc, returning 0", ConstantInputWarning)
        return 0.0
    return float(ac @ bc / denom)


def hadamard(fp: np.ndarray, res: np.ndarray) -> np.ndarray:
    """Elementwise product plane, the comparator's input encoding."""
    if fp.shape != res.shape:
        raise ValueError(f"dimension mismatch: {fp.shape} vs {res.shape}")
    return (fp.astype(np.float32) * res.astype(np.float32)).astype(np.float32)


def resolution_weights(spec: ResolutionSpec) -> np.ndarray:
    """Per-level weights: longest side over the longest side of any level."""
    return spec.weights()


def multires_score(fps, ress, spec: ResolutionSpec, scorer) -> float:
    """Weighted sum of per-level scores: sum_i w_i * scorer(fp_i, res_i).

    :param fps: per-level fingerprints, aligned with spec.levels
    :param ress: per-level residuals, aligned with spec.levels
    :param scorer: callable (Fingerprint, Residual) -> float
    """
    fps = list(fps)
    ress = list(ress)
    if not (len(fps) == len(ress) == spec.count):
        raise ValueError(
            f"misaligned levels: {len(fps)} fingerprints, {len(ress)} residuals, "
            f"{spec.count} resolutions"
        )
    weights = spec.weights()
    total = 0.0
    for w, fp, res in zip(weights, fps, ress):
        total += float(w) * float(scorer(fp, res))
    return total


def ncc_scorer(fp: Fingerprint, res: Residual) -> float:
    return ncc(fp.data, res.data)


def neural_scorer(model):
    """Comparator-backed scorer: probability of 'same sensor' for the
    elementwise product of fingerprint and residual."""
    from .comparator import forward

    def score(fp: Fingerprint, res: Residual) -> float:
        return forward(model, hadamard(fp.data, res.data))

    return score


@dataclass(frozen=True)
class ScoreRecord:
    """Similarity of one query against one enrolled sensor.

    ncc and neural are weight-averaged per-level scores (so ncc stays in
    [-1, 1] and neural in (0, 1)); fused is the weighted sum actually used
    for ranking. per_resolution keeps ((h, w), ncc_i, neural_i) per level.
    """

    query_id: str
    sensor_id: str
    fused: float
    ncc: float = None
    neural: float = None
    per_resolution: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.ncc is None and self.neural is None:
            raise ValueError("a score record needs at least one of ncc/neural")
        if not np.isfinite(self.fused):
            raise ValueError(f"fused score must be finite, got {self.fused}")


def _score_levels(fps, ress, spec, model, mode):
    if mode not in ("ncc", "neural", "joint"):
        raise ValueError(f"unknown scoring mode {mode!r}")
    need_model = mode in ("neural", "joint")
    if need_model and model is None:
        raise ValueError(f"mode {mode!r} requires a comparator model")
    from .comparator import forward

    per_level = []
    for fp, res, (h, w) in zip(fps, ress, spec.levels):
        ncc_i = ncc(fp.data, res.data) if mode in ("ncc", "joint") else None
        neural_i = (
            forward(model, hadamard(fp.data, res.data)) if need_model else None
        )
        per_level.append(((h, w), ncc_i, neural_i))
    return per_level


def joint_score(fps, ress, spec: ResolutionSpec, model, query_id: str = "",
                mode: str = "joint") -> ScoreRecord:
    """Score one query against one sensor's per-level fingerprints.

    fused is the weighted per-level sum of the active scorers; in joint
    mode it equals multires_score(neural) + multires_score(ncc) computed
    as two separate accumulations.
    """
    fps = list(fps)
    ress = list(ress)
    if not (len(fps) == len(ress) == spec.count):
        raise ValueError(
            f"misaligned levels: {len(fps)} fingerprints, {len(ress)} residuals, "
            f"{spec.count} resolutions"
        )
    per_level = _score_levels(fps, ress, spec, model, mode)
    weights = spec.weights()
    wsum = float(weights.sum())

    fused = 0.0
    ncc_mean = neural_mean = None
    if mode in ("ncc", "joint"):
        ncc_sum = 0.0
        for w, (_, ncc_i, _) in zip(weights, per_level):
            ncc_sum += float(w) * ncc_i
        ncc_mean = ncc_sum / wsum
        fused += ncc_sum
    if mode in ("neural", "joint"):
        neural_sum = 0.0
        for w, (_, _, neural_i) in zip(weights, per_level):
            neural_sum += float(w) * neural_i
        neural_mean = neural_sum / wsum
        fused += neural_sum

    return ScoreRecord(
        query_id=query_id,
        sensor_id=fps[0].sensor_id,
        fused=fused,
        ncc=ncc_mean,
        neural=neural_mean,
        per_resolution=tuple(per_level),
    )


def rank_devices(gallery, ress, spec: ResolutionSpec, model=None,
                 mode: str = "ncc", query_id: str = "") -> list:
    """Score a query against every enrolled sensor and rank the results.

    :param gallery: mapping sensor_id -> per-level fingerprint list
    :param ress: per-level residuals of the query
    :return: ScoreRecords sorted by descending fused score, ties broken by
        ascending sensor_id
    """
    if not gallery:
        raise ValueError("gallery is empty")
    records = [
        joint_score(fps, ress, spec, model, query_id=query_id, mode=mode)
        for _, fps in sorted(gallery.items())
    ]
    records.sort(key=lambda r: (-r.fused, r.sensor_id))
    return records


def write_scores_csv(records, path: str) -> None:
    """Export score records as CSV with 9-significant-digit floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "sensor_id", "ncc", "neural", "fused"])
        for rec in records:
            writer.writerow([
                rec.query_id,
                rec.sensor_id,
                "" if rec.ncc is None else fmt9(rec.ncc),
                "" if rec.neural is None else fmt9(rec.neural),
                fmt9(rec.fused),
            ])
