"""Command-line entry point: simulate | enroll | identify | train | eval.

Every option can come from a JSON config file (--config) with the same
key names as the long flags; explicit flags win. Each run writes a
resolved-config snapshot next to its outputs for provenance. Exit codes:
0 success, 1 runtime failure, 2 usage or config error.
"""

import argparse
import dataclasses
import json
import os
import sys

from .comparator import TrainConfig, train, write_loss_csv
from .denoise import DenoiserConfig
from .evaluate import export_scores, run_benchmark, save_report, write_roc_csv
from .matching import rank_devices, write_scores_csv
from .pipeline import (PipelineConfig, build_training_data, enroll_device,
                       gallery_from_fingerprints, residual_levels,
                       spec_from_gallery)
from .png_io import load_plane
from .resample import ResolutionSpec
from .simulate import SimConfig, gen_dataset, load_manifest
from .store import load_fingerprints, load_model, save_fingerprints, save_model
from .util import dump_json

THREADS_ENV = "PRNU_FORGE_THREADS"


class UsageError(ValueError):
    pass


def _add_common(parser):
    parser.add_argument("--config", help="JSON file with defaults for the flags")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker cap (fallback: ${THREADS_ENV}, then 1)")


def _add_denoiser_flags(parser):
    parser.add_argument("--denoiser", choices=["wavelet_wiener", "gaussian", "identity"])
    parser.add_argument("--wavelet-levels", type=int)
    parser.add_argument("--noise-variance", type=float)
    parser.add_argument("--gaussian-sigma", type=float)


def _add_pipeline_flags(parser):
    parser.add_argument("--resolutions", help="levels as h1xw1,h2xw2,...")
    _add_denoiser_flags(parser)
    parser.add_argument("--no-postfilter", action="store_true", default=None,
                        help="skip Wiener post-filtering of fingerprints")
    parser.add_argument("--wiener-window", type=int)
    parser.add_argument("--wiener-noise", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prnu-forge",
        description="Sensor-fingerprint toolkit: simulate, enroll, identify, "
                    "train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--sensors", type=int)
    p.add_argument("--image-size", help="HxW, e.g. 256x256")
    p.add_argument("--images-per-view", type=int)
    p.add_argument("--n-refs", type=int)
    p.add_argument("--strength", type=float)
    p.add_argument("--read-noise", type=float)
    p.add_argument("--shot-noise", type=float)
    p.add_argument("--pretrain-fraction", type=float)
    p.add_argument("--view-seeds", help="two ints, e.g. 101,202")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("enroll", help="estimate and store eval-device fingerprints")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)

    p = sub.add_parser("identify", help="rank enrolled devices for query images")
    _add_common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--query", required=True, help="PNG file or directory")
    p.add_argument("--mode", choices=["ncc", "neural", "joint"], default="ncc")
    p.add_argument("--model")
    p.add_argument("--out", help="CSV output path")
    _add_denoiser_flags(p)

    p = sub.add_parser("train", help="train the comparator on the pretrain split")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--channels", help="conv widths, e.g. 8,16,32,64")
    p.add_argument("--seed", type=int)
    _add_pipeline_flags(p)

    p = sub.add_parser("eval", help="run the identification benchmark")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--store", help="fingerprint store (otherwise enroll on the fly)")
    p.add_argument("--mode", choices=["ncc", "neural", "joint"], default="ncc")
    p.add_argument("--model")
    p.add_argument("--pairing", choices=["all_pairs", "per_query"])
    _add_pipeline_flags(p)
    return parser


def _merge_config(args) -> dict:
    """Start from the JSON config file, overlay non-None flags."""
    merged = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            merged.update(json.load(fh))
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        merged[key] = value
    if "threads" not in merged:
        merged["threads"] = int(os.environ.get(THREADS_ENV, "1"))
    return merged


def _parse_pair(text, what):
    parts = str(text).replace("x", ",").split(",")
    if len(parts) != 2:
        raise UsageError(f"{what} must have two components, got {text!r}")
    return int(parts[0]), int(parts[1])


def _pipeline_config(opts) -> PipelineConfig:
    denoiser = DenoiserConfig(
        kind=opts.get("denoiser", "wavelet_wiener"),
        wavelet_levels=opts.get("wavelet_levels", 4),
        noise_variance=opts.get("noise_variance", 0.0009),
        gaussian_sigma=opts.get("gaussian_sigma", 1.0),
    )
    resolutions = opts.get("resolutions", "192x192,256x256")
    if isinstance(resolutions, str):
        spec = ResolutionSpec.parse(resolutions)
    else:
        spec = ResolutionSpec(tuple(tuple(level) for level in resolutions))
    return PipelineConfig(
        resolutions=spec,
        denoiser=denoiser,
        postfilter=not opts.get("no_postfilter", False),
        wiener_window=opts.get("wiener_window", 3),
        wiener_noise_variance=opts.get("wiener_noise"),
        pairing=opts.get("pairing", "all_pairs"),
        threads=opts.get("threads", 1),
    )


def _snapshot(opts, path, extra=None) -> None:
    payload = dict(opts)
    if extra:
        payload.update(extra)
    dump_json(payload, path)


def cmd_simulate(opts) -> int:
    cfg = SimConfig(
        n_sensors=opts.get("sensors", 16),
        image_size=_parse_pair(opts.get("image_size", "256x256"), "image size"),
        images_per_view=opts.get("images_per_view", 20),
        fingerprint_strength=opts.get("strength", 0.02),
        read_noise_std=opts.get("read_noise", 0.01),
        shot_noise_scale=opts.get("shot_noise", 0.02),
        view_seeds=_parse_pair(opts.get("view_seeds", "101,202"), "view seeds"),
        pretrain_fraction=opts.get("pretrain_fraction", 0.5),
        n_refs=opts.get("n_refs", 5),
        rng_seed=opts.get("seed", 0),
    )
    out = opts["out"]
    manifest = gen_dataset(cfg, out)
    _snapshot(opts, os.path.join(out, "resolved_config.json"),
              {"resolved_sim_config": dataclasses.asdict(cfg)})
    print(f"wrote {len(manifest.records)} images for {len(manifest.devices)} "
          f"sensors under {out}")
    return 0


def cmd_enroll(opts) -> int:
    manifest = load_manifest(opts["manifest"])
    cfg = _pipeline_config(opts)
    fingerprints = []
    for dev in sorted(manifest.eval_devices):
        refs = manifest.references(dev)
        if len(refs) != manifest.n_refs:
            raise UsageError(
                f"device {dev!r} has {len(refs)} reference images, "
                f"expected {manifest.n_refs}"
            )
        fingerprints.extend(
            enroll_device([manifest.resolve(r) for r in refs], dev, cfg)
        )
    out = opts["out"]
    save_fingerprints(fingerprints, out)
    _snapshot(opts, out + ".resolved.json")
    print(f"enrolled {len(manifest.eval_devices)} devices x "
          f"{cfg.resolutions.count} levels -> {out}")
    return 0


def _load_model_if_needed(opts):
    mode = opts.get("mode", "ncc")
    if mode == "ncc":
        return None
    model_path = opts.get("model")
    if not model_path:
        raise UsageError(f"--model is required for mode {mode!r}")
    model, _, _ = load_model(model_path)
    return model


def cmd_identify(opts) -> int:
    fingerprints = load_fingerprints(opts["store"])
    if not fingerprints:
        raise UsageError(f"fingerprint store {opts['store']!r} is empty")
    gallery = gallery_from_fingerprints(fingerprints)
    spec = spec_from_gallery(gallery)
    model = _load_model_if_needed(opts)
    mode = opts.get("mode", "ncc")

    query = opts["query"]
    if os.path.isdir(query):
        paths = sorted(
            os.path.join(query, name) for name in os.listdir(query)
            if name.lower().endswith(".png")
        )
        if not paths:
            raise UsageError(f"no PNG files under {query!r}")
    else:
        paths = [query]

    cfg = _pipeline_config({**opts, "resolutions": [list(t) for t in spec.levels]})
    all_records = []
    for path in paths:
        ress = residual_levels(load_plane(path), cfg, source_id=path)
        ranked = rank_devices(gallery, ress, spec, model=model, mode=mode,
                              query_id=path)
        all_records.extend(ranked)
        print(f"query {path}:")
        for rank, rec in enumerate(ranked, 1):
            parts = [f"  {rank:2d}. {rec.sensor_id}  fused={rec.fused:.6f}"]
            if rec.ncc is not None:
                parts.append(f"ncc={rec.ncc:.6f}")
            if rec.neural is not None:
                parts.append(f"neural={rec.neural:.6f}")
            print("  ".join(parts))
    if opts.get("out"):
        write_scores_csv(all_records, opts["out"])
        _snapshot(opts, opts["out"] + ".resolved.json")
    return 0


def cmd_train(opts) -> int:
    manifest = load_manifest(opts["manifest"])
    if len(manifest.pretrain_devices) < 2:
        raise UsageError(
            f"need at least 2 pretrain devices, got {len(manifest.pretrain_devices)}"
        )
    cfg = _pipeline_config(opts)
    channels = opts.get("channels", "8,16,32,64")
    if isinstance(channels, str):
        channels = tuple(int(c) for c in channels.split(","))
    train_cfg = TrainConfig(
        epochs=opts.get("epochs", 10),
        learning_rate=opts.get("lr", 1e-3),
        batch_size=opts.get("batch_size", 8),
        seed=opts.get("seed", 0),
        steps_per_epoch=opts.get("steps_per_epoch"),
        crop_size=opts.get("crop", 64),
        channels=tuple(channels),
    )
    data = build_training_data(manifest, cfg)
    model, trace = train(data, train_cfg)
    out = opts["out"]
    save_model(model, out, seed=train_cfg.seed,
               config_snapshot={"train": dataclasses.asdict(train_cfg),
                                "resolutions": [list(t) for t in cfg.resolutions.levels]})
    write_loss_csv(trace, out + ".loss.csv")
    _snapshot(opts, out + ".resolved.json")
    print(f"trained {model.n_params} parameters, first loss {trace[0][2]:.4f}, "
          f"last loss {trace[-1][2]:.4f} -> {out}")
    return 0


def cmd_eval(opts) -> int:
    manifest = load_manifest(opts["manifest"])
    cfg = _pipeline_config(opts)
    store = None
    if opts.get("store"):
        store = load_fingerprints(opts["store"])
        gallery = gallery_from_fingerprints(
            fp for fp in store if fp.sensor_id in set(manifest.eval_devices)
        )
        cfg = dataclasses.replace(cfg, resolutions=spec_from_gallery(gallery))
    model = _load_model_if_needed(opts)
    report = run_benchmark(manifest, cfg, mode=opts.get("mode", "ncc"),
                           model=model, store=store)
    out = opts["out"]
    save_report(report, out)
    write_roc_csv(report, out + ".roc.csv")
    export_scores(report, out + ".scores.csv")
    _snapshot(opts, out + ".resolved.json")
    print(f"auc={report.auc:.4f} eer={report.eer:.4f} "
          f"top1={report.top1:.2f} top5={report.top5:.2f} -> {out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "enroll": cmd_enroll,
    "identify": cmd_identify,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _merge_config(args)
        return _COMMANDS[args.command](opts)
    except (UsageError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
