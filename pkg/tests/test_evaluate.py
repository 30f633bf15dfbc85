import numpy as np
import pytest

from prnu_forge.evaluate import (eer, roc_auc, roc_curve, run_benchmark,
                                 topk_accuracy)
from prnu_forge.pipeline import PipelineConfig
from prnu_forge.resample import ResolutionSpec
from prnu_forge.simulate import DatasetManifest, ManifestRecord


def auc_pairwise_oracle(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def eer_sweep_oracle(scores, labels):
    """Exhaustive threshold sweep: count FAR/FRR at every distinct score,
    then interpolate linearly between the bracketing operating points."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    points = [(0.0, 1.0)]
    for t in sorted(set(scores), reverse=True):
        far = float(np.mean(neg >= t))
        frr = float(np.mean(pos < t))
        points.append((far, frr))
    for (far0, frr0), (far1, frr1) in zip(points, points[1:]):
        d0, d1 = far0 - frr0, far1 - frr1
        if d0 == 0.0:
            return far0
        if d0 < 0.0 <= d1:
            lam = -d0 / (d1 - d0)
            return far0 + lam * (far1 - far0)
    return points[-1][0] if points[-1][0] == points[-1][1] else 1.0


def random_instance(rng, max_size=1000, with_ties=True):
    m = int(rng.integers(4, max_size + 1))
    if with_ties and rng.random() < 0.5:
        scores = rng.integers(0, 12, m).astype(np.float64)  # heavy ties
    else:
        scores = rng.normal(size=m)
    labels = rng.random(m) < rng.uniform(0.2, 0.8)
    if not labels.any():
        labels[0] = True
    if labels.all():
        labels[0] = False
    return scores, labels


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.concatenate([np.zeros(50), np.ones(50)])
        labels = scores > 0.5
        assert roc_auc(scores, labels) == 1.0

    def test_null_distribution(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=10_000)
        labels = rng.random(10_000) < 0.5
        assert roc_auc(scores, labels) == pytest.approx(0.5, abs=0.02)

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            scores, labels = random_instance(rng, max_size=300)
            assert roc_auc(scores, labels) == pytest.approx(
                auc_pairwise_oracle(scores, labels), abs=1e-9
            )

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        scores, labels = random_instance(rng, max_size=400, with_ties=False)
        base = roc_auc(scores, labels)
        assert roc_auc(3.0 * scores + 7.0, labels) == base
        assert roc_auc(np.tanh(scores), labels) == base

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([1.0, 2.0], [True, True])


class TestEer:
    def test_perfect(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        labels = np.array([True, True, False, False])
        assert eer(scores, labels) == 0.0

    def test_fully_inverted(self):
        scores = np.array([0.1, 0.2, 0.9, 0.8])
        labels = np.array([True, True, False, False])
        assert eer(scores, labels) == 1.0

    def test_hand_case_one_third(self):
        scores = np.array([0.9, 0.8, 0.4, 0.7, 0.3, 0.2])
        labels = np.array([True, True, True, False, False, False])
        assert eer(scores, labels) == pytest.approx(1 / 3, abs=1e-9)

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            scores, labels = random_instance(rng, max_size=300)
            assert eer(scores, labels) == pytest.approx(
                eer_sweep_oracle(scores, labels), abs=1e-9
            )

    def test_affine_invariance_and_range(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            scores, labels = random_instance(rng, max_size=200)
            value = eer(scores, labels)
            assert 0.0 <= value <= 1.0
            assert eer(2.5 * scores + 1.0, labels) == value


class TestRocCurve:
    def test_monotone(self):
        rng = np.random.default_rng(5)
        scores, labels = random_instance(rng, max_size=500)
        fpr, tpr, thr = roc_curve(scores, labels)
        assert np.all(np.diff(fpr) >= 0)
        assert np.all(np.diff(tpr) >= 0)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0


class TestTopk:
    def test_k_equals_gallery(self):
        rankings = [["a", "b", "c"], ["b", "c", "a"]]
        assert topk_accuracy(rankings, ["c", "a"], 3) == 100.0

    def test_truth_first(self):
        rankings = [["a", "b"], ["b", "a"]]
        assert topk_accuracy(rankings, ["a", "b"], 1) == 100.0

    def test_ranks_1_3_7(self):
        gallery = [f"d{i}" for i in range(8)]
        rankings = [
            gallery,                                   # truth d0 at rank 1
            gallery[1:3] + ["d0"] + gallery[3:],       # truth d0 at rank 3
            gallery[1:7] + ["d0", "d7"],               # truth d0 at rank 7
        ]
        truths = ["d0", "d0", "d0"]
        assert topk_accuracy(rankings, truths, 5) == pytest.approx(66.67, abs=0.01)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(6)
        gallery = [f"d{i}" for i in range(6)]
        rankings = [list(rng.permutation(gallery)) for _ in range(30)]
        truths = [gallery[int(rng.integers(6))] for _ in range(30)]
        values = [topk_accuracy(rankings, truths, k) for k in range(1, 7)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            topk_accuracy([["a", "b"]], ["a"], 3)


def synthetic_manifest(n_devices=2, n_queries_per_device=5, n_pretrain=0):
    devices = [f"cam{i:02d}" for i in range(n_devices + n_pretrain)]
    eval_devices = devices[n_pretrain:]
    records = []
    for dev in devices:
        records.append(ManifestRecord(f"{dev}/1/000.png", dev, 1, "reference"))
        for q in range(n_queries_per_device):
            records.append(ManifestRecord(f"{dev}/2/{q:03d}.png", dev, 2, "test"))
    return DatasetManifest(devices=devices, records=records,
                           pretrain_devices=devices[:n_pretrain],
                           eval_devices=eval_devices, n_refs=1)


class TestRunBenchmark:
    def _cfg(self):
        return PipelineConfig(resolutions=ResolutionSpec(((64, 64),)))

    def test_oracle_scorer_perfect(self):
        manifest = synthetic_manifest(n_devices=2)
        report = run_benchmark(
            manifest, self._cfg(),
            scorer=lambda rec, dev: 1.0 if dev == rec.sensor_id else 0.0,
        )
        assert report.auc == 1.0
        assert report.eer == 0.0
        assert report.top1 == 100.0

    def test_constant_scorer_is_chance(self):
        manifest = synthetic_manifest(n_devices=4)
        report = run_benchmark(manifest, self._cfg(), scorer=lambda rec, dev: 0.5)
        assert report.auc == 0.5
        # constant scores: every query ranks devices alphabetically, so only
        # queries of the alphabetically first device hit at rank 1
        assert report.top1 == pytest.approx(100.0 / 4)

    def test_per_query_pairing_reported(self):
        manifest = synthetic_manifest(n_devices=3)
        cfg = PipelineConfig(resolutions=ResolutionSpec(((64, 64),)),
                             pairing="per_query")
        report = run_benchmark(
            manifest, cfg,
            scorer=lambda rec, dev: 1.0 if dev == rec.sensor_id else 0.0,
        )
        assert report.per_query_auc == 1.0
        assert report.protocol["pairing"] == "per_query"

    def test_mode_requires_model(self):
        manifest = synthetic_manifest(n_devices=2)
        with pytest.raises(ValueError):
            run_benchmark(manifest, self._cfg(), mode="joint")

    def test_too_few_eval_devices(self):
        manifest = synthetic_manifest(n_devices=1)
        with pytest.raises(ValueError):
            run_benchmark(manifest, self._cfg(),
                          scorer=lambda rec, dev: 0.0)
