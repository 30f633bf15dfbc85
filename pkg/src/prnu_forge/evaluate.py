"""Benchmark protocol runner and retrieval metrics.

AUC uses the rank (Mann-Whitney) formulation with tie correction; EER
linearly interpolates between the two ROC points bracketing the
FAR = FRR crossing; top-k counts queries whose true device appears in
the first k ranks. The runner enrolls the held-out devices from their
view-1 references, scores every view-2 test image against all of them,
and logs each file access with its purpose so the view discipline can be
audited after the fact.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .matching import rank_devices, write_scores_csv
from .pipeline import (PipelineConfig, enroll_device, gallery_from_fingerprints,
                       residual_levels)
from .png_io import load_plane
from .util import dump_json, fmt9


def roc_auc(scores, labels) -> float:
    """Probability that a positive outranks a negative (ties count half).

    Computed from average ranks in O(m log m); exactly matches the
    pairwise definition including tie handling.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC points swept from the highest threshold down.

    :return: (fpr, tpr, thresholds) arrays; fpr and tpr are nondecreasing,
        starting at (0, 0) with a synthetic threshold above the max score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    cut = np.concatenate([distinct, [scores.size - 1]])
    tp = np.cumsum(sorted_labels)[cut]
    fp = np.cumsum(~sorted_labels)[cut]
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    thresholds = np.concatenate([[sorted_scores[0] + 1.0], sorted_scores[cut]])
    return fpr, tpr, thresholds


def eer(scores, labels) -> float:
    """Error rate where false acceptance equals false rejection.

    Walks the ROC curve and linearly interpolates between the two points
    bracketing the FAR = FRR crossing.
    """
    fpr, tpr, _ = roc_curve(scores, labels)
    far = fpr
    frr = 1.0 - tpr
    diff = far - frr  # nondecreasing: -1 at the start, +1 at the end
    k = int(np.searchsorted(diff >= 0.0, True))
    if diff[k] == 0.0:
        return float(far[k])
    d0, d1 = diff[k - 1], diff[k]
    lam = -d0 / (d1 - d0)
    return float(far[k - 1] + lam * (far[k] - far[k - 1]))


def topk_accuracy(rankings, truths, k: int) -> float:
    """Percentage of queries whose true sensor is within the first k ranks.

    :param rankings: per query, the sensor ids in ranked order
    :param truths: per query, the true sensor id
    """
    rankings = list(rankings)
    truths = list(truths)
    if len(rankings) != len(truths):
        raise ValueError("one truth per ranking required")
    if not rankings:
        raise ValueError("no queries")
    gallery_size = min(len(r) for r in rankings)
    if k > gallery_size:
        raise ValueError(f"k={k} exceeds gallery size {gallery_size}")
    hits = sum(truth in ranking[:k] for ranking, truth in zip(rankings, truths))
    return 100.0 * hits / len(rankings)


@dataclass
class EvalReport:
    """Benchmark outcome plus everything needed to reproduce it."""

    auc: float
    eer: float
    top1: float
    top5: float
    roc_points: list  # (fpr, tpr, threshold)
    records: list  # ScoreRecord, query-major then rank order
    protocol: dict
    per_query_auc: float = None
    per_query_eer: float = None
    access_log: list = field(default_factory=list)  # (path, purpose)

    def to_payload(self) -> dict:
        payload = {
            "auc": self.auc,
            "eer": self.eer,
            "top1": self.top1,
            "top5": self.top5,
            "protocol": self.protocol,
            "roc_points": [list(p) for p in self.roc_points],
            "scores": [
                {
                    "query_id": r.query_id,
                    "sensor_id": r.sensor_id,
                    "ncc": r.ncc,
                    "neural": r.neural,
                    "fused": r.fused,
                }
                for r in self.records
            ],
        }
        if self.per_query_auc is not None:
            payload["per_query_auc"] = self.per_query_auc
            payload["per_query_eer"] = self.per_query_eer
        return payload


def save_report(report: EvalReport, path: str) -> None:
    dump_json(report.to_payload(), path)


def write_roc_csv(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in report.roc_points:
            writer.writerow([fmt9(fpr), fmt9(tpr), fmt9(thr)])


def _protocol_snapshot(manifest, cfg: PipelineConfig, mode: str) -> dict:
    return {
        "n_refs": manifest.n_refs,
        "resolutions": [list(level) for level in cfg.resolutions.levels],
        "mode": mode,
        "pairing": cfg.pairing,
        "denoiser": asdict(cfg.denoiser),
        "postfilter": cfg.postfilter,
        "eval_devices": list(manifest.eval_devices),
    }


def run_benchmark(manifest, cfg: PipelineConfig, mode: str = "ncc",
                  model=None, store=None, scorer=None,
                  reader=load_plane) -> EvalReport:
    """Evaluate 1:N identification over the held-out device split.

    Fingerprints are estimated from each eval device's view-1 references
    (or taken from a prebuilt store); every view-2 test image of an eval
    device is then ranked against all eval fingerprints. AUC/EER are
    computed over the flattened (query, device) pairs labeled by ground
    truth; per-query macro averages are reported when cfg.pairing is
    'per_query'.

    :param store: optional iterable of Fingerprints replacing enrollment
    :param scorer: optional (record, sensor_id) -> float override used in
        place of image scoring (metric plumbing tests)
    """
    from .simulate import validate_manifest

    validate_manifest(manifest)
    eval_devices = sorted(manifest.eval_devices)
    if len(eval_devices) < 2:
        raise ValueError(f"need at least 2 eval devices, got {len(eval_devices)}")
    if mode in ("neural", "joint") and model is None and scorer is None:
        raise ValueError(f"mode {mode!r} requires a comparator model")

    access_log = []

    def logged_reader(path, purpose):
        access_log.append((path, purpose))
        return reader(path)

    queries = [r for r in manifest.records
               if r.role == "test" and r.sensor_id in set(eval_devices)]
    queries.sort(key=lambda r: r.path)
    if not queries:
        raise ValueError("manifest has no test images for the eval devices")

    if scorer is not None:
        per_query_records = [
            _rank_with_scorer(scorer, rec, eval_devices) for rec in queries
        ]
    else:
        if store is not None:
            gallery = gallery_from_fingerprints(
                fp for fp in store if fp.sensor_id in set(eval_devices)
            )
            missing = set(eval_devices) - set(gallery)
            if missing:
                raise ValueError(f"store lacks fingerprints for {sorted(missing)}")
            for sid, fps in gallery.items():
                if len(fps) != cfg.resolutions.count:
                    raise ValueError(
                        f"store has {len(fps)} levels for {sid!r}, expected "
                        f"{cfg.resolutions.count}"
                    )
        else:
            gallery = {}
            for dev in eval_devices:
                refs = manifest.references(dev)
                if len(refs) != manifest.n_refs:
                    raise ValueError(
                        f"device {dev!r} has {len(refs)} references, "
                        f"expected {manifest.n_refs}"
                    )
                gallery[dev] = enroll_device(
                    [manifest.resolve(r) for r in refs], dev, cfg,
                    reader=lambda p: logged_reader(p, "reference"),
                )

        def score_one(rec):
            image = logged_reader(manifest.resolve(rec), "query")
            ress = residual_levels(image, cfg, source_id=rec.path)
            return rank_devices(gallery, ress, cfg.resolutions, model=model,
                                mode=mode, query_id=rec.path)

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                per_query_records = list(pool.map(score_one, queries))
        else:
            per_query_records = [score_one(rec) for rec in queries]

    flat_scores, flat_labels = [], []
    rankings, truths = [], []
    for rec, ranked in zip(queries, per_query_records):
        rankings.append([r.sensor_id for r in ranked])
        truths.append(rec.sensor_id)
        for r in ranked:
            flat_scores.append(r.fused)
            flat_labels.append(r.sensor_id == rec.sensor_id)

    auc_value = roc_auc(flat_scores, flat_labels)
    eer_value = eer(flat_scores, flat_labels)
    fpr, tpr, thr = roc_curve(flat_scores, flat_labels)

    per_query_auc = per_query_eer = None
    if cfg.pairing == "per_query":
        aucs, eers = [], []
        for rec, ranked in zip(queries, per_query_records):
            s = [r.fused for r in ranked]
            y = [r.sensor_id == rec.sensor_id for r in ranked]
            if any(y) and not all(y):
                aucs.append(roc_auc(s, y))
                eers.append(eer(s, y))
        per_query_auc = float(np.mean(aucs))
        per_query_eer = float(np.mean(eers))

    n_devices = len(eval_devices)
    report = EvalReport(
        auc=auc_value,
        eer=eer_value,
        top1=topk_accuracy(rankings, truths, 1),
        top5=topk_accuracy(rankings, truths, min(5, n_devices)),
        roc_points=list(zip(fpr.tolist(), tpr.tolist(), thr.tolist())),
        records=[r for ranked in per_query_records for r in ranked],
        protocol=_protocol_snapshot(manifest, cfg, mode),
        per_query_auc=per_query_auc,
        per_query_eer=per_query_eer,
        access_log=access_log,
    )
    return report


def _rank_with_scorer(scorer, record, eval_devices):
    from .matching import ScoreRecord

    ranked = []
    for dev in eval_devices:
        value = float(scorer(record, dev))
        ranked.append(ScoreRecord(query_id=record.path, sensor_id=dev,
                                  fused=value, ncc=value))
    ranked.sort(key=lambda r: (-r.fused, r.sensor_id))
    return ranked


def export_scores(report: EvalReport, path: str) -> None:
    write_scores_csv(report.records, path)
