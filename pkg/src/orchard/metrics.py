"""Confusion matrix and derived per-class precision/recall/F1/accuracy.

Rows are actual classes, columns predicted. Zero-denominator metrics are
defined as 0 so reports stay total. Table cells round half-up to two
decimals; accuracy is reported unrounded as trace/total.
"""

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import List

import numpy as np

from .errors import DataError, ShapeError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # C x C int64, [actual][predicted]
    classes: List[str]

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class ClassStats:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassMetrics:
    per_class: List[ClassStats]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float


def round_half_up(x, ndigits=2):
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def confusion_matrix(actual, predicted, classes):
    """Tally actual/predicted index pairs into a C x C matrix."""
    if isinstance(classes, int):
        classes = [f"class{i}" for i in range(classes)]
    c = len(classes)
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise ShapeError(
            f"confusion_matrix: {actual.shape[0]} actual vs {predicted.shape[0]} predicted labels"
        )
    for name, arr in (("actual", actual), ("predicted", predicted)):
        if arr.size and (arr.min() < 0 or arr.max() >= c):
            raise DataError(f"confusion_matrix: {name} index out of range [0, {c})")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    return ConfusionMatrix(counts=counts, classes=list(classes))


def compute_metrics(cm):
    """Per-class precision/recall/F1 plus overall and macro-averaged values."""
    counts = np.asarray(cm.counts, dtype=np.int64)
    if counts.sum() == 0:
        raise DataError("compute_metrics: empty confusion matrix")
    col_sums = counts.sum(axis=0)
    row_sums = counts.sum(axis=1)
    per_class = []
    for k, name in enumerate(cm.classes):
        tp = int(counts[k, k])
        precision = tp / col_sums[k] if col_sums[k] > 0 else 0.0
        recall = tp / row_sums[k] if row_sums[k] > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(
            ClassStats(
                name=name,
                precision=float(precision),
                recall=float(recall),
                f1=float(f1),
                support=int(row_sums[k]),
            )
        )
    accuracy = float(np.trace(counts) / counts.sum())
    return ClassMetrics(
        per_class=per_class,
        accuracy=accuracy,
        macro_precision=float(np.mean([s.precision for s in per_class])),
        macro_recall=float(np.mean([s.recall for s in per_class])),
        macro_f1=float(np.mean([s.f1 for s in per_class])),
    )


def evaluate(model, dataset, batch_size=32):
    """Run the model over a dataset: (ConfusionMatrix, ClassMetrics,
    per-sample rows (path, actual, predicted, max_prob))."""
    if list(dataset.classes) != list(model.class_names):
        raise DataError(
            f"class mismatch: model knows {model.class_names}, dataset has {dataset.classes}"
        )
    images = dataset.images_array()
    labels = dataset.labels_array()
    actual = labels.argmax(axis=1)
    predicted = np.empty(len(dataset), dtype=np.int64)
    max_prob = np.empty(len(dataset), dtype=np.float64)
    for start in range(0, len(dataset), batch_size):
        probs = model.forward(images[start : start + batch_size])
        predicted[start : start + probs.shape[0]] = probs.argmax(axis=1)
        max_prob[start : start + probs.shape[0]] = probs.max(axis=1)
    cm = confusion_matrix(actual, predicted, dataset.classes)
    log = [
        (rec.source_path, dataset.classes[int(a)], dataset.classes[int(p)], float(m))
        for rec, a, p, m in zip(dataset.records, actual, predicted, max_prob)
    ]
    return cm, compute_metrics(cm), log


def metrics_report(cm, metrics, claimed_accuracy=None):
    """JSON-ready report. When a claimed accuracy is supplied and disagrees
    with the count-derived one beyond rounding, the report carries a note
    flagging the discrepancy."""
    report = {
        "classes": list(cm.classes),
        "total": cm.total,
        "accuracy": metrics.accuracy,
        "per_class": [
            {
                "class": s.name,
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
                "support": s.support,
            }
            for s in metrics.per_class
        ],
        "macro": {
            "precision": metrics.macro_precision,
            "recall": metrics.macro_recall,
            "f1": metrics.macro_f1,
        },
        "notes": [],
    }
    if claimed_accuracy is not None:
        if abs(claimed_accuracy - metrics.accuracy) > 0.00005:
            report["notes"].append(
                f"claimed accuracy {claimed_accuracy:.4f} differs from the "
                f"count-derived accuracy {metrics.accuracy:.4f}; the matrix counts win"
            )
    return report


def confusion_to_csv(cm, path):
    """C x C counts with class names as header row and first column."""
    lines = ["actual\\predicted," + ",".join(cm.classes)]
    for name, row in zip(cm.classes, cm.counts):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def predictions_to_csv(log, path):
    lines = ["source_path,actual,predicted,max_prob"]
    for src, actual, predicted, prob in log:
        lines.append(f"{src},{actual},{predicted},{prob!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def metrics_to_json(report, path):
    Path(path).write_text(json.dumps(report, indent=2) + "\n")
