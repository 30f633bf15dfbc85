"""Source-camera identification via sensor pattern noise.

Estimate per-sensor fingerprints from reference images, match query
residuals by normalized cross-correlation and/or a learned comparator of
elementwise-product planes, aggregate scores over multiple resolutions,
and benchmark the whole pipeline on a built-in synthetic sensor
simulator.
"""

from .comparator import (AdamState, ComparatorModel, TrainConfig, TrainSample,
                         adam_step, backward, bce_pair_loss, forward,
                         sample_batch, train)
from .denoise import (DenoiserConfig, denoise_gaussian, denoise_wavelet_wiener,
                      make_denoiser)
from .evaluate import (EvalReport, eer, roc_auc, roc_curve, run_benchmark,
                       topk_accuracy)
from .fingerprint import (Fingerprint, Residual, estimate_fingerprint,
                          extract_residual, to_luminance, wiener_postfilter)
from .matching import (ConstantInputWarning, ScoreRecord, hadamard,
                       joint_score, multires_score, ncc, rank_devices,
                       resolution_weights)
from .pipeline import PipelineConfig, build_training_data, enroll_device
from .resample import ResolutionSpec, pad_reflect_square, resize_bicubic
from .simulate import (DatasetManifest, SimConfig, SensorProfile, capture,
                       gen_dataset, gen_scene, gen_sensor, load_manifest)
from .store import (StoreFormatError, load_fingerprints, load_model,
                    save_fingerprints, save_model)

__version__ = "0.1.0"
