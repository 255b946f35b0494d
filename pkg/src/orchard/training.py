"""Adam training loop with mixing augmentation, early stopping and
checkpointing.

Per epoch: seeded shuffle, batches of batch_size (final partial batch
kept), per-batch mixing, fused softmax/cross-entropy loss, bias-corrected
Adam. Validation always runs on unmixed batches. The best parameters by
the monitored metric are kept and restored at the end.
"""

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DataError, TrainingError
from .layers import softmax_cross_entropy
from .mixing import MixConfig, apply_mixers
from .models import ModelConfig, build_model, init_parameters

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_FORMAT_VERSION = 1
HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    max_epochs: int = 60
    patience: int = 10
    mix: MixConfig = field(default_factory=MixConfig)
    seed: int = 0
    monitor: str = "val_loss"  # or "val_accuracy"

    def validate(self):
        problems = []
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.patience < 0:
            problems.append(f"patience must be >= 0, got {self.patience}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.monitor not in ("val_loss", "val_accuracy"):
            problems.append(f"monitor must be val_loss or val_accuracy, got {self.monitor!r}")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    epochs: List[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def best(self):
        return self.epochs[self.best_epoch - 1]

    def to_csv(self, path):
        lines = [HISTORY_HEADER]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.train_loss!r},{e.train_acc!r},{e.val_loss!r},{e.val_acc!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


class AdamState:
    """First/second moment tensors per parameter name plus the step count."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr):
    """In-place bias-corrected Adam update on every parameter."""
    state.t += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.t
    correction2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise TrainingError(f"adam_step: no gradient for parameter {name!r}")
        if not np.isfinite(g).all():
            raise TrainingError(f"adam_step: non-finite gradient in {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        m_hat = m / np.float32(correction1)
        v_hat = v / np.float32(correction2)
        p -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(ADAM_EPS))


def _evaluate_split(model, images, labels, batch_size):
    """Mean loss and accuracy over a split, unmixed, batch order fixed."""
    n = images.shape[0]
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        loss, probs, _ = softmax_cross_entropy(model.forward_logits(xb), yb)
        total_loss += loss * xb.shape[0]
        correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())
    return total_loss / n, correct / n


def _monitor_value(stats, monitor):
    return stats.val_loss if monitor == "val_loss" else stats.val_acc


def _improved(current, best, monitor):
    if best is None:
        return True
    return current < best if monitor == "val_loss" else current > best


def train(model, train_set, val_set, config):
    """Run the loop; returns (model restored to its best parameters,
    TrainHistory)."""
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("train and validation splits must be non-empty")
    if len(train_set.classes) != model.config.num_classes:
        raise DataError(
            f"model expects {model.config.num_classes} classes, dataset has {len(train_set.classes)}"
        )
    model.class_names = list(train_set.classes)

    x_train = train_set.images_array()
    y_train = train_set.labels_array()
    x_val = val_set.images_array()
    y_val = val_set.labels_array()

    shuffle_seed, mix_seed = np.random.SeedSequence(config.seed).spawn(2)
    rng_shuffle = np.random.default_rng(shuffle_seed)
    rng_mix = np.random.default_rng(mix_seed)

    params = model.named_parameters()
    state = AdamState(params)
    history = TrainHistory()
    best_value = None
    best_params = None
    wait = 0

    n = x_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        perm = rng_shuffle.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            batch = apply_mixers(x_train[idx], y_train[idx], config.mix, rng_mix)
            logits = model.forward_logits(batch.images)
            loss, probs, dlogits = softmax_cross_entropy(logits, batch.labels)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch} batch {bi}")
            model.backward(dlogits)
            adam_step(params, model.named_gradients(), state, config.learning_rate)
            epoch_loss += loss * len(idx)
            epoch_correct += int(
                (probs.argmax(axis=1) == batch.labels.argmax(axis=1)).sum()
            )

        val_loss, val_acc = _evaluate_split(model, x_val, y_val, config.batch_size)
        stats = EpochStats(
            epoch=epoch,
            train_loss=epoch_loss / n,
            train_acc=epoch_correct / n,
            val_loss=val_loss,
            val_acc=val_acc,
        )
        history.epochs.append(stats)
        history.stopped_epoch = epoch

        current = _monitor_value(stats, config.monitor)
        if _improved(current, best_value, config.monitor):
            best_value = current
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            wait = 0
        else:
            wait += 1
        if wait >= config.patience:
            break

    for name, p in params.items():
        p[...] = best_params[name]
    return model, history


def save_checkpoint(model, path, adam_state=None):
    """Write manifest.json plus one raw little-endian float32 file per
    tensor, in manifest order."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tensors = []
    blobs = {}
    for name, p in model.named_parameters().items():
        fname = name.replace("/", "_") + ".bin"
        raw = np.ascontiguousarray(p, dtype="<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(p.shape),
                "dtype": "f32",
                "file": fname,
                "byte_length": len(raw),
            }
        )
        blobs[fname] = raw

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "variant": model.variant,
        "config": model.config.to_dict(),
        "classes": list(model.class_names),
        "tensors": tensors,
    }
    if adam_state is not None:
        opt_tensors = []
        for prefix, bank in (("m", adam_state.m), ("v", adam_state.v)):
            for name, arr in bank.items():
                fname = f"opt.{prefix}.{name}.bin"
                raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                opt_tensors.append(
                    {
                        "name": f"{prefix}.{name}",
                        "shape": list(arr.shape),
                        "dtype": "f32",
                        "file": fname,
                        "byte_length": len(raw),
                    }
                )
                blobs[fname] = raw
        manifest["optimizer"] = {"t": adam_state.t, "tensors": opt_tensors}
    else:
        manifest["optimizer"] = None

    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for fname, raw in blobs.items():
        (out / fname).write_bytes(raw)


def _read_tensor(directory, entry):
    f = directory / entry["file"]
    if not f.exists():
        raise DataError(f"checkpoint tensor file missing: {entry['file']}")
    raw = f.read_bytes()
    if len(raw) != entry["byte_length"]:
        raise DataError(
            f"checkpoint tensor {entry['name']!r}: file holds {len(raw)} bytes, "
            f"manifest says {entry['byte_length']}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
    return np.ascontiguousarray(arr, dtype=np.float32)


def load_checkpoint(path):
    """Rebuild the model from a checkpoint directory; errors name the
    offending tensor."""
    directory = Path(path)
    mf = directory / "manifest.json"
    if not mf.exists():
        raise DataError(f"no manifest.json under {directory}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt checkpoint manifest: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {manifest.get('format_version')}")

    config = ModelConfig.from_dict(manifest["config"])
    model = build_model(config)
    model.class_names = list(manifest["classes"])
    params = model.named_parameters()
    seen = set()
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in params:
            raise DataError(f"checkpoint tensor {name!r} not in model {config.variant}")
        arr = _read_tensor(directory, entry)
        if arr.shape != params[name].shape:
            raise DataError(
                f"checkpoint tensor {name!r} shape {arr.shape} != model {params[name].shape}"
            )
        params[name][...] = arr
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise DataError(f"checkpoint missing tensors: {sorted(missing)}")
    return model


def alpha_sweep(train_set, val_set, model_config, base_train_config, grid):
    """Train one model per (alpha_mixup, alpha_cutmix) grid point with a
    shared seed; rows are (a_mix, a_cut, best val_accuracy, best val_loss)
    in grid order."""
    if not grid:
        raise ConfigError("alpha sweep grid is empty")
    rows = []
    for a_mix, a_cut in grid:
        cfg = replace(
            base_train_config,
            mix=MixConfig(alpha_mixup=a_mix, alpha_cutmix=a_cut, seed=base_train_config.seed),
        )
        model = init_parameters(build_model(model_config), seed=cfg.seed)
        try:
            _, history = train(model, train_set, val_set, cfg)
        except (TrainingError, DataError) as exc:
            raise type(exc)(f"sweep point (alpha_mixup={a_mix}, alpha_cutmix={a_cut}): {exc}") from exc
        best = history.best()
        rows.append((a_mix, a_cut, best.val_acc, best.val_loss))
    return rows


def sweep_to_csv(rows, path):
    lines = ["alpha_mixup,alpha_cutmix,val_accuracy,val_loss"]
    for a_mix, a_cut, acc, loss in rows:
        lines.append(f"{a_mix!r},{a_cut!r},{acc!r},{loss!r}")
    Path(path).write_text("\n".join(lines) + "\n")
