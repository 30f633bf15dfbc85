"""Synthetic sensor benchmark generator.

Each simulated sensor carries a fixed multiplicative per-pixel gain field;
a capture is scene * (1 + gain) plus shot noise (scaling with the square
root of the scene) and read noise, clamped to [0, 1]. Scenes come in two
disjoint "views" (separate seed streams); every sensor photographs the
same scene pool of a view, so image content carries no device signal.

The dataset layout on disk is <out>/<sensor_id>/<view>/<index>.png with a
single manifest.json describing records, roles and the device split.
Generation is a pure function of the config: re-running produces
byte-identical trees.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .png_io import save_plane_u16
from .util import dump_json, stable_id_hash

ROLES = ("reference", "pretrain", "test", "unused")


@dataclass(frozen=True)
class SimConfig:
    """Dataset generation knobs (desk-scale defaults)."""

    n_sensors: int = 16
    image_size: tuple = (256, 256)
    images_per_view: int = 20
    fingerprint_strength: float = 0.02
    read_noise_std: float = 0.03
    shot_noise_scale: float = 0.06
    view_seeds: tuple = (101, 202)
    pretrain_fraction: float = 0.5
    n_refs: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_sensors < 2:
            raise ValueError("need at least 2 sensors")
        if self.images_per_view < self.n_refs:
            raise ValueError(
                f"images_per_view ({self.images_per_view}) must cover "
                f"n_refs ({self.n_refs})"
            )
        if self.n_refs < 1:
            raise ValueError("n_refs must be >= 1")
        if not (0.0 < self.pretrain_fraction < 1.0):
            raise ValueError("pretrain_fraction must be in (0, 1)")
        if self.view_seeds[0] == self.view_seeds[1]:
            raise ValueError("the two view seeds must differ")
        if self.fingerprint_strength <= 0:
            raise ValueError("fingerprint_strength must be positive")


@dataclass(frozen=True)
class SensorProfile:
    """Ground-truth gain field and noise levels of one simulated sensor."""

    sensor_id: str
    true_fingerprint: np.ndarray  # float32, zero-mean
    read_noise_std: float
    shot_noise_scale: float


@dataclass(frozen=True)
class ManifestRecord:
    path: str  # relative to the manifest directory
    sensor_id: str
    view: int
    role: str


@dataclass
class DatasetManifest:
    devices: list
    records: list  # ManifestRecord
    pretrain_devices: list
    eval_devices: list
    n_refs: int
    config_snapshot: dict = field(default_factory=dict)
    root: str = "."  # directory paths are relative to

    def resolve(self, record: ManifestRecord) -> str:
        return os.path.join(self.root, record.path)

    def references(self, sensor_id: str) -> list:
        return [r for r in self.records
                if r.sensor_id == sensor_id and r.role == "reference"]

    def by_role(self, role: str) -> list:
        return [r for r in self.records if r.role == role]


def gen_sensor(rng: np.random.Generator, size, strength: float,
               read_noise_std: float, shot_noise_scale: float,
               sensor_id: str = "") -> SensorProfile:
    """Draw an i.i.d. normal gain field with the given std, then zero-mean it."""
    if strength <= 0:
        raise ValueError(f"fingerprint strength must be positive, got {strength}")
    field_ = rng.normal(0.0, strength, size)
    field_ -= field_.mean()
    return SensorProfile(
        sensor_id=sensor_id,
        true_fingerprint=field_.astype(np.float32),
        read_noise_std=read_noise_std,
        shot_noise_scale=shot_noise_scale,
    )


def gen_scene(view_seed: int, scene_index: int, size) -> np.ndarray:
    """Deterministic textured scene: a few sinusoidal gratings plus
    low-pass noise, normalized into [0.1, 0.9]."""
    h, w = size
    if h < 64 or w < 64:
        raise ValueError(f"scenes need at least 64x64 pixels, got {size}")
    rng = np.random.default_rng([int(view_seed), int(scene_index)])
    ys, xs = np.mgrid[0:h, 0:w]
    scene = np.zeros((h, w), dtype=np.float64)
    for _ in range(int(rng.integers(3, 9))):
        amp = rng.uniform(0.3, 1.0)
        fy = rng.uniform(0.5, 40.0)
        fx = rng.uniform(0.5, 40.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        scene += amp * np.sin(2.0 * np.pi * (fy * ys / h + fx * xs / w) + phase)
    # lightly blurred noise keeps pixel-level texture in the scene, so
    # residuals carry content leakage the way real photographs do
    blur = gaussian_filter(rng.normal(0.0, 1.0, (h, w)), rng.uniform(1.0, 3.0))
    scene += 2.0 * blur
    lo, hi = scene.min(), scene.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5, dtype=np.float32)
    scene = 0.1 + 0.8 * (scene - lo) / (hi - lo)
    return scene.astype(np.float32)


def capture(scene: np.ndarray, sensor: SensorProfile,
            rng: np.random.Generator) -> np.ndarray:
    """One exposure: scene * (1 + gain) + shot + read noise, clamped to [0, 1]."""
    if scene.shape != sensor.true_fingerprint.shape:
        raise ValueError(
            f"scene {scene.shape} does not match sensor "
            f"{sensor.true_fingerprint.shape}"
        )
    scene64 = scene.astype(np.float64)
    signal = scene64 * (1.0 + sensor.true_fingerprint.astype(np.float64))
    shot = rng.normal(0.0, 1.0, scene.shape) * (
        sensor.shot_noise_scale * np.sqrt(scene64)
    )
    read = rng.normal(0.0, 1.0, scene.shape) * sensor.read_noise_std
    return np.clip(signal + shot + read, 0.0, 1.0).astype(np.float32)


def _sensor_ids(n: int) -> list:
    return [f"cam{i:02d}" for i in range(n)]


def _split_devices(cfg: SimConfig, sensor_ids) -> tuple:
    rng = np.random.default_rng([cfg.rng_seed, 1])
    order = list(rng.permutation(len(sensor_ids)))
    n_pre = int(round(cfg.pretrain_fraction * len(sensor_ids)))
    n_pre = min(max(n_pre, 1), len(sensor_ids) - 1)
    pretrain = sorted(sensor_ids[i] for i in order[:n_pre])
    evaluation = sorted(sensor_ids[i] for i in order[n_pre:])
    return pretrain, evaluation


def build_sensor(cfg: SimConfig, sensor_id: str) -> SensorProfile:
    """Sensor profile from its own deterministic stream."""
    rng = np.random.default_rng([cfg.rng_seed, 2, stable_id_hash(sensor_id)])
    return gen_sensor(rng, cfg.image_size, cfg.fingerprint_strength,
                      cfg.read_noise_std, cfg.shot_noise_scale, sensor_id)


def _capture_rng(cfg: SimConfig, sensor_id: str, view: int,
                 index: int) -> np.random.Generator:
    return np.random.default_rng(
        [cfg.rng_seed, 3, stable_id_hash(sensor_id), view, index]
    )


def gen_dataset(cfg: SimConfig, out_dir: str) -> DatasetManifest:
    """Render all captures to PNG and write manifest.json.

    View-1 images: the first n_refs per sensor are references; the rest
    are pretrain samples for pretrain devices and unused otherwise.
    View-2 images are all test queries.
    """
    os.makedirs(out_dir, exist_ok=True)
    sensor_ids = _sensor_ids(cfg.n_sensors)
    pretrain, evaluation = _split_devices(cfg, sensor_ids)
    scenes = {
        view: [gen_scene(cfg.view_seeds[view - 1], i, cfg.image_size)
               for i in range(cfg.images_per_view)]
        for view in (1, 2)
    }

    records = []
    for sid in sensor_ids:
        sensor = build_sensor(cfg, sid)
        for view in (1, 2):
            view_dir = os.path.join(out_dir, sid, str(view))
            os.makedirs(view_dir, exist_ok=True)
            for index in range(cfg.images_per_view):
                image = capture(scenes[view][index], sensor,
                                _capture_rng(cfg, sid, view, index))
                rel = f"{sid}/{view}/{index:03d}.png"
                save_plane_u16(os.path.join(out_dir, rel), image)
                if view == 2:
                    role = "test"
                elif index < cfg.n_refs:
                    role = "reference"
                elif sid in pretrain:
                    role = "pretrain"
                else:
                    role = "unused"
                records.append(ManifestRecord(rel, sid, view, role))

    manifest = DatasetManifest(
        devices=sensor_ids,
        records=records,
        pretrain_devices=pretrain,
        eval_devices=evaluation,
        n_refs=cfg.n_refs,
        config_snapshot=asdict(cfg),
        root=out_dir,
    )
    validate_manifest(manifest)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    payload = {
        "devices": list(manifest.devices),
        "records": [
            {"path": r.path, "sensor_id": r.sensor_id, "view": r.view,
             "role": r.role}
            for r in manifest.records
        ],
        "split": {
            "pretrain_devices": list(manifest.pretrain_devices),
            "eval_devices": list(manifest.eval_devices),
            "n_refs": manifest.n_refs,
        },
        "config_snapshot": manifest.config_snapshot,
    }
    dump_json(payload, path)


def load_manifest(path: str) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    records = [
        ManifestRecord(r["path"], r["sensor_id"], int(r["view"]), r["role"])
        for r in payload["records"]
    ]
    manifest = DatasetManifest(
        devices=list(payload["devices"]),
        records=records,
        pretrain_devices=list(payload["split"]["pretrain_devices"]),
        eval_devices=list(payload["split"]["eval_devices"]),
        n_refs=int(payload["split"]["n_refs"]),
        config_snapshot=payload.get("config_snapshot", {}),
        root=os.path.dirname(os.path.abspath(path)),
    )
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: DatasetManifest) -> None:
    """Check the protocol constraints; raises ValueError on violation."""
    overlap = set(manifest.pretrain_devices) & set(manifest.eval_devices)
    if overlap:
        raise ValueError(f"pretrain and eval devices overlap: {sorted(overlap)}")
    known = set(manifest.devices)
    ref_counts = {}
    for r in manifest.records:
        if r.role not in ROLES:
            raise ValueError(f"unknown role {r.role!r} for {r.path}")
        if r.sensor_id not in known:
            raise ValueError(f"record {r.path} names unknown device {r.sensor_id!r}")
        if r.view not in (1, 2):
            raise ValueError(f"record {r.path} has bad view {r.view}")
        if r.role in ("reference", "pretrain") and r.view != 1:
            raise ValueError(
                f"{r.role} image {r.path} is in view {r.view}; only view 1 "
                "may hold references or pretrain samples"
            )
        if r.role == "test" and r.view != 2:
            raise ValueError(f"test image {r.path} must come from view 2")
        if r.role == "reference":
            ref_counts[r.sensor_id] = ref_counts.get(r.sensor_id, 0) + 1
    for dev in manifest.devices:
        if ref_counts.get(dev, 0) != manifest.n_refs:
            raise ValueError(
                f"device {dev!r} has {ref_counts.get(dev, 0)} references, "
                f"expected {manifest.n_refs}"
            )
