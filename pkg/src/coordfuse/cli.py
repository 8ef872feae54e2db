"""Command-line driver for the dual-branch land-cover experiments.

Subcommands:
  convert  CSV pixel dump -> binary cube + label rasters
  synth    generate a synthetic labeled cube
  run      ingest -> normalize -> split -> train -> evaluate -> render
  energy   fully connected pairwise energy of baseline vs dual-branch maps

`run` trains the dual-branch model and the spectral-only baseline from one
config and seed; `--baseline-only` restricts it to the baseline. All the
randomness derives from the single top-level seed: the split uses `seed`,
the dual-branch model `seed + 1`, the baseline `seed + 2`, so reruns with
the same inputs write byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from coordfuse.dataset import (
    CsvFormatError,
    CubeFormatError,
    DataCube,
    SplitSpec,
    coord_features,
    extract_samples,
    from_csv,
    generate_synthetic,
    load_cube,
    load_labels,
    normalize_cube,
    save_cube,
    save_labels,
    stratified_split,
)
from coordfuse.evaluation import (
    CrfParams,
    confusion,
    default_palette,
    dense_energy,
    metrics,
    render_map,
    write_report,
)
from coordfuse.model import (
    CheckpointError,
    DualBranchModel,
    ModelConfig,
    build,
    forward,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from coordfuse.numerics import create_rng
from coordfuse.optimizer import NumericalError, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

MAX_CROP_PIXELS = 64 * 64


class UsageError(Exception):
    """Bad arguments or a malformed/incomplete config file."""


_MODEL_KEYS = {
    "conv_filters": 20,
    "kernel_len": 10,
    "pool_width": 2,
    "pool_stride": 2,
    "dense_width": 100,
    "coord_hidden": 256,
    "keep_prob": 0.75,
}
_TRAIN_KEYS = {
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "batch_size": 64,
    "max_epochs": 500,
}
_CRF_KEYS = {
    "w1": 1.0,
    "w2": 1.0,
    "theta_alpha": 8.0,
    "theta_beta": 0.5,
    "theta_gamma": 3.0,
}
_TOP_KEYS = (
    "cube",
    "labels",
    "fraction",
    "seed",
    "min_per_class",
    "out_dir",
    "model",
    "train",
    "crf",
    "appearance_bands",
)


@dataclass
class ExperimentConfig:
    cube: str
    labels: str
    fraction: float = 0.05
    seed: int = 0
    min_per_class: int = 2
    out_dir: str = "out"
    model: dict = field(default_factory=lambda: dict(_MODEL_KEYS))
    train: dict = field(default_factory=lambda: dict(_TRAIN_KEYS))
    crf: dict = field(default_factory=lambda: dict(_CRF_KEYS))
    appearance_bands: list = field(default_factory=lambda: [0, 1, 2])

    def model_config(self, num_bands: int, num_classes: int, baseline: bool) -> ModelConfig:
        return ModelConfig(
            num_bands=num_bands, num_classes=num_classes, baseline=baseline, **self.model
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)

    def crf_params(self) -> CrfParams:
        return CrfParams(**self.crf)


def _merge_group(raw: dict, defaults: dict, group: str) -> dict:
    if not isinstance(raw, dict):
        raise UsageError(f"config section {group!r} must be an object")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise UsageError(f"unknown keys in config section {group!r}: {sorted(unknown)}")
    merged = dict(defaults)
    for key, val in raw.items():
        if isinstance(val, bool):
            raise UsageError(f"{group}.{key} must be a number, got {val!r}")
        if isinstance(defaults[key], int):
            if not isinstance(val, int):
                raise UsageError(f"{group}.{key} must be an integer, got {val!r}")
            merged[key] = val
        else:
            if not isinstance(val, (int, float)):
                raise UsageError(f"{group}.{key} must be a number, got {val!r}")
            merged[key] = float(val)
    return merged


def load_config(path) -> ExperimentConfig:
    """Parse and fully validate an experiment config; unknown keys are errors."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a JSON object")
    unknown = set(raw) - set(_TOP_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key in ("cube", "labels"):
        if key not in raw or not isinstance(raw[key], str):
            raise UsageError(f"config must set {key!r} to a path string")

    cfg = ExperimentConfig(cube=raw["cube"], labels=raw["labels"])
    try:
        if "fraction" in raw:
            cfg.fraction = float(raw["fraction"])
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        if "min_per_class" in raw:
            cfg.min_per_class = int(raw["min_per_class"])
        if "out_dir" in raw:
            cfg.out_dir = str(raw["out_dir"])
        cfg.model = _merge_group(raw.get("model", {}), _MODEL_KEYS, "model")
        cfg.train = _merge_group(raw.get("train", {}), _TRAIN_KEYS, "train")
        cfg.crf = _merge_group(raw.get("crf", {}), _CRF_KEYS, "crf")
        if "appearance_bands" in raw:
            bands = raw["appearance_bands"]
            if not isinstance(bands, list) or not bands:
                raise UsageError("appearance_bands must be a non-empty list")
            cfg.appearance_bands = [int(b) for b in bands]
        if not 0.0 < cfg.fraction < 1.0:
            raise UsageError(f"fraction must lie in (0, 1), got {cfg.fraction}")
        if min(cfg.appearance_bands) < 0:
            raise UsageError("appearance_bands must be non-negative band indices")
        # Fail on bad hyperparameter values now, not mid-run. The dummy band
        # count is generous so only data-independent problems trip here.
        cfg.train_config(seed=0).validate()
        cfg.crf_params().validate()
        dummy_bands = cfg.model["kernel_len"] + cfg.model["pool_width"] + 8
        cfg.model_config(num_bands=dummy_bands, num_classes=2, baseline=False).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config value: {exc}") from exc
    return cfg


def _predict_raster(model: DualBranchModel, norm: DataCube) -> np.ndarray:
    """Class id for every pixel of the image, labeled or not."""
    h, w = norm.height, norm.width
    out = np.zeros((h, w), dtype=np.int64)
    for r in range(h):
        for c in range(w):
            out[r, c] = predict(model, norm.values[r, c], coord_features(r, c, h, w))
    return out


def _predict_crop(model: DualBranchModel, norm: DataCube, crop):
    """(labeling, probmap) over a crop; coords stay in the full-image frame."""
    r0, c0, ch, cw = crop
    h, w = norm.height, norm.width
    k = model.config.num_classes
    labeling = np.zeros((ch, cw), dtype=np.int64)
    probmap = np.zeros((ch, cw, k))
    for i in range(ch):
        for j in range(cw):
            r, c = r0 + i, c0 + j
            probs, _ = forward(
                model, norm.values[r, c], coord_features(r, c, h, w)
            )
            labeling[i, j] = int(np.argmax(probs)) + 1
            probmap[i, j] = probs
    return labeling, probmap


def cmd_convert(args) -> int:
    cube, labels = from_csv(args.csv)
    save_cube(cube, args.cube)
    save_labels(labels, args.labels)
    print(
        f"wrote {cube.height}x{cube.width}x{cube.bands} cube to {args.cube}, "
        f"{labels.num_classes} classes to {args.labels}"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.seed < 0:
        raise UsageError(f"seed must be non-negative, got {args.seed}")
    rng = create_rng(args.seed)
    cube, labels = generate_synthetic(
        rng,
        args.height,
        args.width,
        args.bands,
        args.classes,
        noise=args.noise,
        overlap=args.overlap,
        coordinate_separable=args.coordinate_separable,
    )
    save_cube(cube, args.cube)
    save_labels(labels, args.labels)
    print(
        f"wrote synthetic {cube.height}x{cube.width}x{cube.bands} cube "
        f"with {labels.num_classes} classes"
    )
    if args.emit_config:
        model_keys = dict(_MODEL_KEYS)
        # Shrink the kernel when the cube is too narrow for the default.
        max_kernel = cube.bands - model_keys["pool_width"] + 1
        model_keys["kernel_len"] = max(1, min(model_keys["kernel_len"], max_kernel))
        config = {
            "cube": args.cube,
            "labels": args.labels,
            "fraction": 0.05,
            "seed": args.seed,
            "min_per_class": 2,
            "out_dir": "out",
            "model": model_keys,
            "train": dict(_TRAIN_KEYS),
            "crf": dict(_CRF_KEYS),
            "appearance_bands": list(range(min(3, cube.bands))),
        }
        with open(args.emit_config, "w", newline="") as f:
            json.dump(config, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"wrote config to {args.emit_config}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir

    cube = load_cube(cfg.cube)
    labels = load_labels(cfg.labels)
    if (cube.height, cube.width) != (labels.height, labels.width):
        raise ValueError(
            f"cube is {cube.height}x{cube.width} but labels are "
            f"{labels.height}x{labels.width}"
        )
    k = labels.num_classes
    if k < 2:
        raise ValueError(f"need at least 2 classes, found {k}")
    norm = normalize_cube(cube)

    spec = SplitSpec(fraction=cfg.fraction, seed=cfg.seed, min_per_class=cfg.min_per_class)
    train_idx, test_idx = stratified_split(labels, spec)
    train_set = extract_samples(norm, labels, train_idx)
    test_set = extract_samples(norm, labels, test_idx)
    train_counts = np.bincount(train_set.labels, minlength=k + 1)[1:]

    os.makedirs(cfg.out_dir, exist_ok=True)
    palette = default_palette(k)
    jobs = []
    if not args.baseline_only:
        jobs.append(("dual", "", False, cfg.seed + 1))
    jobs.append(("baseline", "baseline_", True, cfg.seed + 2))

    for name, prefix, is_baseline, seed in jobs:
        rng = create_rng(seed)
        model = build(cfg.model_config(cube.bands, k, is_baseline), rng)
        history = train(
            model,
            train_set.features,
            train_set.coords,
            train_set.labels,
            cfg.train_config(seed),
            rng=rng,
        )
        preds = np.empty(len(test_set), dtype=np.int64)
        for i in range(len(test_set)):
            preds[i] = predict(model, test_set.features[i], test_set.coords[i])
        report = metrics(confusion(preds, test_set.labels, num_classes=k))
        write_report(
            report,
            os.path.join(cfg.out_dir, prefix + "report.json"),
            train_counts=train_counts,
        )
        render_map(
            _predict_raster(model, norm),
            palette,
            os.path.join(cfg.out_dir, prefix + "map.ppm"),
        )
        save_checkpoint(model, os.path.join(cfg.out_dir, prefix + "model.ckpt"))
        history.to_csv(os.path.join(cfg.out_dir, prefix + "train_log.csv"))
        print(f"{name}: oa={report.oa:.4f} aa={report.aa:.4f} kappa={report.kappa:.4f}")
    return EXIT_OK


def _parse_crop(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"crop must be 'row,col,height,width', got {text!r}")
    try:
        r, c, h, w = (int(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"crop fields must be integers: {text!r}") from exc
    if r < 0 or c < 0 or h < 1 or w < 1:
        raise UsageError(f"crop out of range: {text!r}")
    if h * w > MAX_CROP_PIXELS:
        raise UsageError(f"crop covers {h * w} pixels, limit is {MAX_CROP_PIXELS}")
    return r, c, h, w


def cmd_energy(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    crop = _parse_crop(args.crop)

    cube = load_cube(cfg.cube)
    r0, c0, ch, cw = crop
    if r0 + ch > cube.height or c0 + cw > cube.width:
        raise UsageError(
            f"crop {crop} exceeds the {cube.height}x{cube.width} image"
        )
    if max(cfg.appearance_bands) >= cube.bands:
        raise ValueError(
            f"appearance_bands {cfg.appearance_bands} out of range for "
            f"{cube.bands} bands"
        )
    norm = normalize_cube(cube)
    appearance = norm.values[r0 : r0 + ch, c0 : c0 + cw, cfg.appearance_bands]

    dual_path = args.dual_ckpt or os.path.join(cfg.out_dir, "model.ckpt")
    base_path = args.baseline_ckpt or os.path.join(cfg.out_dir, "baseline_model.ckpt")
    energies = {}
    params = cfg.crf_params()
    for name, path in (("baseline", base_path), ("dual", dual_path)):
        model = load_checkpoint(path)
        if model.config.num_bands != cube.bands:
            raise ValueError(
                f"{path} expects {model.config.num_bands} bands, cube has {cube.bands}"
            )
        labeling, probmap = _predict_crop(model, norm, crop)
        energies[name] = dense_energy(labeling, probmap, appearance, params)

    print(f"baseline_energy={energies['baseline']:.6f}")
    print(f"dual_energy={energies['dual']:.6f}")
    print(f"difference={energies['baseline'] - energies['dual']:.6f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep usage errors at 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="coordfuse",
        description="Per-pixel land-cover classification with coordinate fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="CSV pixel dump to binary cube + labels")
    p.add_argument("csv", help="input CSV: row,col,label,b0..bN")
    p.add_argument("cube", help="output cube path")
    p.add_argument("labels", help="output label raster path")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic labeled cube")
    p.add_argument("cube", help="output cube path")
    p.add_argument("labels", help="output label raster path")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=30)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument(
        "--coordinate-separable",
        action="store_true",
        help="give the two largest regions identical spectra",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-config", help="also write a full experiment config here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="train and evaluate from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out-dir", default=None, help="override config output directory")
    p.add_argument(
        "--baseline-only",
        action="store_true",
        help="train only the spectral baseline",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("energy", help="pairwise energy of baseline vs dual maps")
    p.add_argument("--config", required=True)
    p.add_argument("--crop", required=True, help="row,col,height,width (<= 4096 px)")
    p.add_argument("--dual-ckpt", default=None, help="default: OUT_DIR/model.ckpt")
    p.add_argument(
        "--baseline-ckpt", default=None, help="default: OUT_DIR/baseline_model.ckpt"
    )
    p.add_argument("--out-dir", default=None, help="override config output directory")
    p.set_defaults(func=cmd_energy)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CubeFormatError, CsvFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
