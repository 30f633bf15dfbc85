"""Shared plumbing between enrollment, training and evaluation.

Per-level processing order: pad the luminance plane to a square, resize
it to each configured resolution, and only then extract the residual, so
every level keeps its own high-frequency content instead of inheriting a
downsampled residual. Fingerprints are re-estimated per level from the
resized references and Wiener post-filtered (configurable).
"""

from dataclasses import dataclass, field

import numpy as np

from .comparator import TrainingData
from .denoise import DenoiserConfig, make_denoiser
from .fingerprint import (Fingerprint, estimate_fingerprint, extract_residual,
                          wiener_postfilter)
from .png_io import load_plane
from .resample import ResolutionSpec, pad_reflect_square, resize_bicubic


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the scoring path needs besides the data itself."""

    resolutions: ResolutionSpec = field(
        default_factory=lambda: ResolutionSpec(((192, 192), (256, 256)))
    )
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    postfilter: bool = True  # Wiener post-filter fingerprints at every level
    wiener_window: int = 3
    wiener_noise_variance: float = None  # None: median of local variances
    pairing: str = "all_pairs"  # or "per_query"
    threads: int = 1

    def __post_init__(self):
        if self.pairing not in ("all_pairs", "per_query"):
            raise ValueError(f"unknown pairing mode {self.pairing!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def level_planes(image: np.ndarray, spec: ResolutionSpec) -> list:
    """Square-pad then resize the luminance plane to every level."""
    squared = pad_reflect_square(image)
    return [resize_bicubic(squared, level) for level in spec.levels]


def residual_levels(image: np.ndarray, cfg: PipelineConfig,
                    source_id: str = "") -> list:
    """Per-level residuals of one image."""
    denoiser = make_denoiser(cfg.denoiser)
    return [
        extract_residual(plane, denoiser, source_id=source_id)
        for plane in level_planes(image, cfg.resolutions)
    ]


def enroll_device(image_paths, sensor_id: str, cfg: PipelineConfig,
                  reader=load_plane) -> list:
    """Estimate one fingerprint per resolution level from reference images.

    :param image_paths: reference image files (view-1 references)
    :param reader: path -> luminance plane, injectable for tests
    :return: [Fingerprint per level], post-filtered when cfg.postfilter
    """
    image_paths = list(image_paths)
    if not image_paths:
        raise ValueError(f"no reference images for device {sensor_id!r}")
    per_level = [[] for _ in range(cfg.resolutions.count)]
    for path in image_paths:
        image = reader(path)
        for idx, residual in enumerate(residual_levels(image, cfg, source_id=str(path))):
            per_level[idx].append(residual)
    fingerprints = []
    for residuals in per_level:
        fp = estimate_fingerprint(residuals, sensor_id)
        if cfg.postfilter:
            fp = wiener_postfilter(fp, cfg.wiener_window, cfg.wiener_noise_variance)
        fingerprints.append(fp)
    return fingerprints


def build_training_data(manifest, cfg: PipelineConfig,
                        reader=load_plane) -> TrainingData:
    """Fingerprints and residual planes for the pretrain device split.

    Fingerprints come from each pretrain device's own references; the
    residual pool holds that device's view-1 pretrain images.
    """
    fingerprints = {}
    residuals = {}
    for dev in manifest.pretrain_devices:
        refs = [manifest.resolve(r) for r in manifest.references(dev)]
        fps = enroll_device(refs, dev, cfg, reader=reader)
        fingerprints[dev] = [fp.data for fp in fps]
        pool = []
        for rec in manifest.records:
            if rec.sensor_id == dev and rec.role == "pretrain":
                image = reader(manifest.resolve(rec))
                planes = [r.data for r in residual_levels(image, cfg, rec.path)]
                pool.append((rec.path, planes))
        residuals[dev] = pool
    return TrainingData(fingerprints=fingerprints, residuals=residuals)


def gallery_from_fingerprints(fingerprints) -> dict:
    """Group a flat fingerprint list into sensor_id -> per-level list,
    levels ordered by ascending longest side (weights order)."""
    gallery = {}
    for fp in fingerprints:
        gallery.setdefault(fp.sensor_id, []).append(fp)
    for sid, fps in gallery.items():
        fps.sort(key=lambda f: (max(f.resolution_tag), f.resolution_tag))
    return gallery


def spec_from_gallery(gallery: dict) -> ResolutionSpec:
    """Recover the resolution levels from an enrolled gallery."""
    tags = None
    for sid, fps in sorted(gallery.items()):
        device_tags = tuple(fp.resolution_tag for fp in fps)
        if tags is None:
            tags = device_tags
        elif device_tags != tags:
            raise ValueError(
                f"device {sid!r} has levels {device_tags}, expected {tags}"
            )
    if not tags:
        raise ValueError("gallery is empty")
    return ResolutionSpec(tags)
