"""Command line pipeline: prepare | train | evaluate | explain | sweep | compare.

One output directory carries a whole run: `prepare` fills it with the
augmented split cache and manifest, the other commands read that cache
and/or checkpoints and drop their reports next to it. Every command echoes
its resolved config as JSON so reruns are reproducible, and all outputs are
deterministic given the seeds (no timestamps).

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    LabeledImageSet,
    Record,
    SplitSpec,
    augment_expand,
    load_dataset,
    stratified_split,
    write_manifest,
)
from .errors import ConfigError, DataError, OrchardError
from .explain import grad_cam, grid_segments, kernel_shap, lime_explain, render_overlay
from .imageops import bilinear_resize
from .metrics import (
    confusion_to_csv,
    evaluate,
    metrics_report,
    metrics_to_json,
    predictions_to_csv,
    round_half_up,
)
from .mixing import MixConfig
from .models import VARIANTS, ModelConfig, build_model, init_parameters
from .training import TrainConfig, alpha_sweep, load_checkpoint, save_checkpoint, sweep_to_csv, train

DEFAULT_CONFIG = {
    "dataset": None,
    "out": "orchard-run",
    "seed": 0,
    "image_size": 64,
    "model": {
        "variant": "mini_inception",
        "channels": [16, 32],
        "num_blocks": 2,
    },
    "split": {
        "train_fraction": 0.8,
        "val_fraction": 0.1,
        "test_fraction": 0.1,
        "stage": "before_augmentation",
    },
    "augment": {"factor": 8, "deterministic_bank": True},
    "train": {
        "batch_size": 32,
        "learning_rate": 1e-4,
        "max_epochs": 60,
        "patience": 10,
        "monitor": "val_loss",
        "alpha_mixup": 0.0,
        "alpha_cutmix": 0.0,
    },
    "sweep": {"grid": [[0, 0], [0.2, 0.3], [0.25, 0.4], [0.3, 0.5], [0.35, 0.6]]},
    "explain": {
        "method": "all",
        "grid": 4,
        "lime_samples": 200,
        "shap_samples": 512,
        "target_class": None,
    },
}

SPLIT_NAMES = ("train", "val", "test")


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(args):
    """Defaults <- config file <- CLI flags (flags win)."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = _deep_merge(cfg, file_cfg)
    if getattr(args, "dataset", None):
        cfg["dataset"] = args.dataset
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "model", None):
        cfg["model"]["variant"] = args.model
    if getattr(args, "image_size", None):
        cfg["image_size"] = args.image_size
    if getattr(args, "alpha_mixup", None) is not None:
        cfg["train"]["alpha_mixup"] = args.alpha_mixup
    if getattr(args, "alpha_cutmix", None) is not None:
        cfg["train"]["alpha_cutmix"] = args.alpha_cutmix
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["max_epochs"] = args.epochs
    if getattr(args, "patience", None) is not None:
        cfg["train"]["patience"] = args.patience
    if getattr(args, "method", None):
        cfg["explain"]["method"] = args.method
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Collect every violated field before failing."""
    problems = []
    if cfg["model"]["variant"] not in VARIANTS:
        problems.append(f"model.variant: must be one of {VARIANTS}, got {cfg['model']['variant']!r}")
    if not isinstance(cfg["image_size"], int) or cfg["image_size"] < 8:
        problems.append(f"image_size: must be an int >= 8, got {cfg['image_size']!r}")
    split = cfg["split"]
    fracs = (split["train_fraction"], split["val_fraction"], split["test_fraction"])
    if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        problems.append(f"split: fractions must be nonnegative and sum to 1, got {fracs}")
    if split["stage"] not in ("before_augmentation", "after_augmentation"):
        problems.append(f"split.stage: unknown stage {split['stage']!r}")
    if cfg["augment"]["factor"] < 1:
        problems.append(f"augment.factor: must be >= 1, got {cfg['augment']['factor']}")
    tr = cfg["train"]
    if tr["batch_size"] < 1:
        problems.append(f"train.batch_size: must be >= 1, got {tr['batch_size']}")
    if tr["learning_rate"] <= 0:
        problems.append(f"train.learning_rate: must be > 0, got {tr['learning_rate']}")
    if tr["max_epochs"] < 1:
        problems.append(f"train.max_epochs: must be >= 1, got {tr['max_epochs']}")
    if tr["patience"] < 0:
        problems.append(f"train.patience: must be >= 0, got {tr['patience']}")
    if tr["alpha_mixup"] < 0 or tr["alpha_cutmix"] < 0:
        problems.append(
            f"train.alpha_mixup/alpha_cutmix: must be >= 0, got "
            f"({tr['alpha_mixup']}, {tr['alpha_cutmix']})"
        )
    if tr["monitor"] not in ("val_loss", "val_accuracy"):
        problems.append(f"train.monitor: must be val_loss or val_accuracy, got {tr['monitor']!r}")
    ex = cfg["explain"]
    if ex["method"] not in ("gradcam", "lime", "shap", "all"):
        problems.append(f"explain.method: unknown method {ex['method']!r}")
    if ex["grid"] < 1:
        problems.append(f"explain.grid: must be >= 1, got {ex['grid']}")
    grid = cfg["sweep"]["grid"]
    if not grid or any(len(point) != 2 or point[0] < 0 or point[1] < 0 for point in grid):
        problems.append(f"sweep.grid: needs (alpha_mixup, alpha_cutmix) pairs >= 0, got {grid}")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))


def _echo_config(cfg, out_dir, command):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{command}_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _train_config(cfg):
    tr = cfg["train"]
    return TrainConfig(
        batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"],
        max_epochs=tr["max_epochs"],
        patience=tr["patience"],
        mix=MixConfig(
            alpha_mixup=tr["alpha_mixup"], alpha_cutmix=tr["alpha_cutmix"], seed=cfg["seed"]
        ),
        seed=cfg["seed"],
        monitor=tr["monitor"],
    )


def _model_config(cfg, num_classes):
    size = cfg["image_size"]
    return ModelConfig(
        variant=cfg["model"]["variant"],
        input_size=(size, size),
        channels=list(cfg["model"]["channels"]),
        num_blocks=cfg["model"]["num_blocks"],
        num_classes=num_classes,
    )


# ----------------------------------------------------------------- prepare


def _save_split_cache(out_dir, name, dataset):
    cache = out_dir / "cache"
    cache.mkdir(parents=True, exist_ok=True)
    np.save(cache / f"{name}.images.npy", dataset.images_array())
    np.save(cache / f"{name}.labels.npy", dataset.labels_array())
    lines = ["source_path,origin"]
    lines += [f"{r.source_path},{r.origin}" for r in dataset.records]
    (cache / f"{name}.records.csv").write_text("\n".join(lines) + "\n")


def _load_split_cache(out_dir, name, classes):
    cache = Path(out_dir) / "cache"
    images_file = cache / f"{name}.images.npy"
    if not images_file.exists():
        raise DataError(f"no prepared cache for split {name!r} under {cache}; run `orchard prepare`")
    images = np.load(images_file)
    labels = np.load(cache / f"{name}.labels.npy")
    meta = (cache / f"{name}.records.csv").read_text().splitlines()[1:]
    records = []
    for img, lab, line in zip(images, labels, meta):
        source_path, origin = line.rsplit(",", 1)
        records.append(Record(image=img, label=lab, source_path=source_path, origin=origin))
    return LabeledImageSet(classes=list(classes), records=records)


def _load_summary(out_dir):
    path = Path(out_dir) / "summary.json"
    if not path.exists():
        raise DataError(f"no prepared dataset under {out_dir}; run `orchard prepare` first")
    return json.loads(path.read_text())


def cmd_prepare(cfg):
    if not cfg["dataset"]:
        raise ConfigError("prepare needs --dataset (or dataset in the config file)")
    out_dir = Path(cfg["out"])
    size = cfg["image_size"]
    dataset = load_dataset(cfg["dataset"], size=(size, size))
    n_original = len(dataset)
    expanded = augment_expand(
        dataset,
        factor=cfg["augment"]["factor"],
        seed=cfg["seed"],
        deterministic_bank=cfg["augment"]["deterministic_bank"],
    )
    spec = SplitSpec(
        train_fraction=cfg["split"]["train_fraction"],
        val_fraction=cfg["split"]["val_fraction"],
        test_fraction=cfg["split"]["test_fraction"],
        seed=cfg["seed"],
        split_stage=cfg["split"]["stage"],
    )
    splits = stratified_split(expanded, spec)
    by_name = dict(zip(SPLIT_NAMES, splits))

    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir / "manifest.csv", by_name, dataset.classes)
    for name, split in by_name.items():
        _save_split_cache(out_dir, name, split)
    summary = {
        "classes": dataset.classes,
        "image_size": size,
        "original_count": n_original,
        "augment_factor": cfg["augment"]["factor"],
        "total_records": len(expanded),
        "splits": {name: len(split) for name, split in by_name.items()},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _echo_config(cfg, out_dir, "prepare")
    print(f"prepared {n_original} originals -> {len(expanded)} records "
          f"({', '.join(f'{k}={v}' for k, v in summary['splits'].items())})")
    return 0


# ------------------------------------------------------------------- train


def cmd_train(cfg):
    out_dir = Path(cfg["out"])
    summary = _load_summary(out_dir)
    classes = summary["classes"]
    if summary["image_size"] != cfg["image_size"]:
        cfg = copy.deepcopy(cfg)
        cfg["image_size"] = summary["image_size"]
    train_set = _load_split_cache(out_dir, "train", classes)
    val_set = _load_split_cache(out_dir, "val", classes)

    model_config = _model_config(cfg, num_classes=len(classes))
    model = init_parameters(build_model(model_config), seed=cfg["seed"])
    model, history = train(model, train_set, val_set, _train_config(cfg))

    ckpt_dir = out_dir / f"checkpoint-{model_config.variant}"
    save_checkpoint(model, ckpt_dir)
    history.to_csv(out_dir / "history.csv")
    _echo_config(cfg, out_dir, "train")
    best = history.best()
    print(
        f"trained {model_config.variant}: best epoch {history.best_epoch}"
        f"/{history.stopped_epoch}, val_loss {best.val_loss:.4f}, "
        f"val_acc {best.val_acc:.4f}; checkpoint at {ckpt_dir}"
    )
    return 0


# ---------------------------------------------------------------- evaluate


def _dataset_for_eval(cfg, split):
    out_dir = Path(cfg["out"])
    summary = _load_summary(out_dir)
    dataset = _load_split_cache(out_dir, split, summary["classes"])
    if len(dataset) == 0:
        raise DataError(f"split {split!r} is empty; choose another --split")
    return dataset


def cmd_evaluate(cfg, checkpoint, split):
    model = load_checkpoint(checkpoint)
    dataset = _dataset_for_eval(cfg, split)
    cm, stats, log = evaluate(model, dataset, batch_size=cfg["train"]["batch_size"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    confusion_to_csv(cm, out_dir / "confusion.csv")
    metrics_to_json(metrics_report(cm, stats), out_dir / "metrics.json")
    predictions_to_csv(log, out_dir / "predictions.csv")
    _echo_config(cfg, out_dir, "evaluate")
    print(f"evaluated {model.variant} on {split}: accuracy {stats.accuracy:.4f} "
          f"over {cm.total} samples")
    return 0


# ----------------------------------------------------------------- explain


def _load_single_image(path, size):
    from .data import _decode

    p = Path(path)
    if not p.exists():
        raise DataError(f"image not found: {p}")
    return _decode(p, (size, size))


def cmd_explain(cfg, checkpoint, image_path, method):
    model = load_checkpoint(checkpoint)
    size = model.config.input_size[0]
    image = _load_single_image(image_path, size)
    ex = cfg["explain"]
    target = ex["target_class"]
    if target is None:
        target, _ = model.predict_class(image)
    target = int(target)

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    rng = np.random.default_rng(cfg["seed"])
    segmentation = grid_segments(image, ex["grid"])
    report = {
        "image": str(image_path),
        "target_class": target,
        "target_class_name": model.class_names[target],
        "segments": segmentation.num_segments,
        "lime": None,
        "shap": None,
    }

    if method in ("gradcam", "all"):
        hm = grad_cam(model, image, target)
        render_overlay(image, hm, out_dir / f"{stem}.gradcam.png")
    if method in ("lime", "all"):
        attribution = lime_explain(model, image, segmentation, ex["lime_samples"], target, rng)
        render_overlay(image, attribution, out_dir / f"{stem}.lime.png")
        report["lime"] = {
            "weights": [float(w) for w in attribution.weights],
            "intercept": attribution.intercept,
            "r2": attribution.r2,
        }
    if method in ("shap", "all"):
        attribution = kernel_shap(model, image, segmentation, ex["shap_samples"], target, rng)
        render_overlay(image, attribution, out_dir / f"{stem}.shap.png")
        report["shap"] = {
            "weights": [float(w) for w in attribution.weights],
            "base_value": attribution.intercept,
            "efficiency_residual": attribution.efficiency_residual,
        }

    (out_dir / "attributions.json").write_text(json.dumps(report, indent=2) + "\n")
    _echo_config(cfg, out_dir, "explain")
    print(f"explained {stem} (class {report['target_class_name']}) with {method}")
    return 0


# ------------------------------------------------------------------- sweep


def cmd_sweep(cfg):
    out_dir = Path(cfg["out"])
    summary = _load_summary(out_dir)
    classes = summary["classes"]
    if summary["image_size"] != cfg["image_size"]:
        cfg = copy.deepcopy(cfg)
        cfg["image_size"] = summary["image_size"]
    train_set = _load_split_cache(out_dir, "train", classes)
    val_set = _load_split_cache(out_dir, "val", classes)
    grid = [tuple(point) for point in cfg["sweep"]["grid"]]
    rows = alpha_sweep(
        train_set, val_set, _model_config(cfg, len(classes)), _train_config(cfg), grid
    )
    sweep_to_csv(rows, out_dir / "sweep.csv")
    _echo_config(cfg, out_dir, "sweep")
    print(f"swept {len(rows)} grid points -> {out_dir / 'sweep.csv'}")
    return 0


# ----------------------------------------------------------------- compare


def _metrics_table_rows(model, stats):
    rows = []
    for i, s in enumerate(stats.per_class):
        accuracy_cell = f"{stats.accuracy:.4f}" if i == 0 else ""
        rows.append(
            f"| {model.variant if i == 0 else ''} | {s.name} "
            f"| {round_half_up(s.precision):.2f} | {round_half_up(s.recall):.2f} "
            f"| {round_half_up(s.f1):.2f} | {accuracy_cell} |"
        )
    return rows


def cmd_compare(cfg, checkpoint_a, checkpoint_b, split):
    model_a = load_checkpoint(checkpoint_a)
    model_b = load_checkpoint(checkpoint_b)
    dataset = _dataset_for_eval(cfg, split)
    lines = [
        "# Model comparison",
        "",
        f"Evaluated on the `{split}` split ({len(dataset)} samples).",
        "",
        "| Model | Class | Precision | Recall | F1-score | Accuracy |",
        "|---|---|---|---|---|---|",
    ]
    for model in (model_a, model_b):
        _, stats, _ = evaluate(model, dataset, batch_size=cfg["train"]["batch_size"])
        lines.extend(_metrics_table_rows(model, stats))
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "compare.md").write_text("\n".join(lines) + "\n")
    _echo_config(cfg, out_dir, "compare")
    print(f"compared {model_a.variant} vs {model_b.variant} -> {out_dir / 'compare.md'}")
    return 0


# ----------------------------------------------------------------- parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="orchard",
        description="Image-classification pipeline: dataset prep, CNN training, "
        "evaluation and explanations.",
    )
    parser.add_argument("--version", action="version", version=f"orchard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_train_flags=False):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--dataset", help="dataset root: one subdirectory per class")
        p.add_argument("--out", help="run/output directory")
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--image-size", type=int, dest="image_size", help="square image size")
        if with_train_flags:
            p.add_argument("--model", choices=VARIANTS, help="architecture variant")
            p.add_argument("--alpha-mixup", type=float, dest="alpha_mixup")
            p.add_argument("--alpha-cutmix", type=float, dest="alpha_cutmix")
            p.add_argument("--epochs", type=int, help="max training epochs")
            p.add_argument("--patience", type=int, help="early-stopping patience")

    p = sub.add_parser("prepare", help="load, augment and split a dataset into the run dir")
    common(p)

    p = sub.add_parser("train", help="train a model on a prepared run dir")
    common(p, with_train_flags=True)

    p = sub.add_parser("evaluate", help="confusion matrix and metrics for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")

    p = sub.add_parser("explain", help="Grad-CAM/LIME/SHAP overlays for one image")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--image", required=True, help="image file to explain")
    p.add_argument("--method", choices=("gradcam", "lime", "shap", "all"))

    p = sub.add_parser("sweep", help="train across the (alpha_mixup, alpha_cutmix) grid")
    common(p, with_train_flags=True)

    p = sub.add_parser("compare", help="side-by-side metrics table for two checkpoints")
    common(p)
    p.add_argument("--checkpoint-a", required=True, dest="checkpoint_a")
    p.add_argument("--checkpoint-b", required=True, dest="checkpoint_b")
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, args.split)
        if args.command == "explain":
            return cmd_explain(cfg, args.checkpoint, args.image, cfg["explain"]["method"])
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "compare":
            return cmd_compare(cfg, args.checkpoint_a, args.checkpoint_b, args.split)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"orchard: config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"orchard: data error: {exc}", file=sys.stderr)
        return 3
    except OrchardError as exc:
        print(f"orchard: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
