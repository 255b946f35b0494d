"""Dataset loading, stratified splitting and classic augmentation.

A dataset is a directory with one subdirectory per class holding PNG/JPEG
files. Images are decoded to RGB, bilinear-resized and rescaled by 1/255
into float32 CHW records with one-hot labels. Everything downstream is
deterministic given the seeds.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import imageops
from .errors import DataError

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


@dataclass
class Record:
    image: np.ndarray  # 3 x H x W float32 in [0, 1]
    label: np.ndarray  # length-C soft label, sums to 1
    source_path: str
    origin: str = "original"  # "original" | "augmented"


@dataclass
class LabeledImageSet:
    classes: list
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def class_index(self, record):
        return int(np.argmax(record.label))

    def images_array(self):
        if not self.records:
            return np.zeros((0, 3, 0, 0), dtype=np.float32)
        return np.stack([r.image for r in self.records]).astype(np.float32)

    def labels_array(self):
        if not self.records:
            return np.zeros((0, len(self.classes)), dtype=np.float32)
        return np.stack([r.label for r in self.records]).astype(np.float32)

    def validate(self):
        if len(self.classes) < 2:
            raise DataError(f"need at least 2 classes, got {len(self.classes)}")
        for i, r in enumerate(self.records):
            s = float(r.label.sum())
            if abs(s - 1.0) > 1e-6:
                raise DataError(f"record {i} label sums to {s}, not 1")
            if len(r.label) != len(self.classes):
                raise DataError(f"record {i} label length {len(r.label)} != C={len(self.classes)}")


@dataclass
class SplitSpec:
    train_fraction: float
    val_fraction: float
    test_fraction: float
    seed: int = 0
    split_stage: str = "before_augmentation"  # or "after_augmentation"

    def validate(self):
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fractions):
            raise DataError(f"split fractions must be nonnegative, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise DataError(f"split fractions sum to {sum(fractions)}, not 1")
        if self.split_stage not in ("before_augmentation", "after_augmentation"):
            raise DataError(f"unknown split_stage {self.split_stage!r}")


def _worker_count():
    env = os.environ.get("ORCHARD_THREADS")
    if env:
        return max(1, int(env))
    return 1


def _decode(path, size):
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")  # grayscale promotes to 3 identical channels
            arr = np.asarray(rgb, dtype=np.float32) / np.float32(255.0)
    except Exception as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1))
    return imageops.bilinear_resize(chw, size[0], size[1])


def load_dataset(root_dir, size=(256, 256)):
    """Build a LabeledImageSet from root/<class>/<image> trees.

    Classes are sorted lexicographically and records ordered by
    (class, filename); decoding may fan out over ORCHARD_THREADS workers but
    assembly order is fixed.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if len(classes) < 2:
        raise DataError(f"dataset root {root} has {len(classes)} class directories, need >= 2")

    jobs = []
    for ci, cls in enumerate(classes):
        files = sorted(
            p for p in (root / cls).iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise DataError(f"class directory {cls!r} contains no images")
        jobs.extend((ci, p) for p in files)

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(lambda j: _decode(j[1], size), jobs))
    else:
        images = [_decode(p, size) for _, p in jobs]

    records = []
    for (ci, path), img in zip(jobs, images):
        label = np.zeros(len(classes), dtype=np.float32)
        label[ci] = 1.0
        records.append(Record(image=img, label=label, source_path=str(path)))
    return LabeledImageSet(classes=classes, records=records)


def largest_remainder_counts(total, fractions):
    """Apportion `total` items by fractions; leftover seats go to the
    largest remainders, ties to the later index."""
    exact = [total * f for f in fractions]
    counts = [int(np.floor(e)) for e in exact]
    leftover = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (exact[i] - counts[i], i), reverse=True)
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(dataset, spec):
    """Split per class by largest-remainder counts, shuffled by spec.seed.

    With split_stage=before_augmentation, records are grouped by
    source_path so every augmented derivative follows its original into the
    same split; with after_augmentation each record is assigned on its own.
    """
    spec.validate()
    fractions = (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    rng = np.random.default_rng(spec.seed)

    # group records, preserving input order
    groups = {}
    group_order = []
    for rec in dataset.records:
        key = rec.source_path if spec.split_stage == "before_augmentation" else id(rec)
        if key not in groups:
            groups[key] = []
            group_order.append(key)
        groups[key].append(rec)

    by_class = {ci: [] for ci in range(len(dataset.classes))}
    for key in group_order:
        first = groups[key][0]
        by_class[int(np.argmax(first.label))].append(key)

    splits = ([], [], [])
    for ci in range(len(dataset.classes)):
        keys = by_class[ci]
        if not keys:
            continue
        counts = largest_remainder_counts(len(keys), fractions)
        for idx, (frac, count) in enumerate(zip(fractions, counts)):
            if frac > 0 and count == 0:
                raise DataError(
                    f"class {dataset.classes[ci]!r} has too few records "
                    f"({len(keys)}) for split fractions {fractions}"
                )
        perm = rng.permutation(len(keys))
        shuffled = [keys[i] for i in perm]
        bounds = np.cumsum(counts)
        for si in range(3):
            start = 0 if si == 0 else bounds[si - 1]
            for key in shuffled[start : bounds[si]]:
                splits[si].extend(groups[key])

    return tuple(
        LabeledImageSet(classes=list(dataset.classes), records=recs) for recs in splits
    )


# label-preserving transform bank; 1 original + 7 transforms = the x8 expansion
TRANSFORM_BANK = (
    ("hflip", imageops.hflip),
    ("vflip", imageops.vflip),
    ("rot+15", lambda img: imageops.rotate(img, 15.0)),
    ("rot-15", lambda img: imageops.rotate(img, -15.0)),
    ("bright0.8", lambda img: imageops.brightness(img, 0.8)),
    ("bright1.2", lambda img: imageops.brightness(img, 1.2)),
    ("zoom1.1", lambda img: imageops.center_zoom(img, 1.1)),
)


def augment_expand(dataset, factor=8, seed=0, deterministic_bank=True):
    """Expand every record into itself plus (factor - 1) transformed copies.

    Deterministic bank mode applies the first factor-1 bank transforms in
    order (factor capped at 1 + bank size); sampled mode draws them from the
    seeded rng instead.
    """
    if factor < 1:
        raise DataError(f"augmentation factor must be >= 1, got {factor}")
    n_bank = len(TRANSFORM_BANK)
    if deterministic_bank and factor - 1 > n_bank:
        raise DataError(
            f"deterministic bank holds {n_bank} transforms; factor {factor} exceeds {n_bank + 1}"
        )
    rng = np.random.default_rng(seed)
    out = []
    for rec in dataset.records:
        out.append(rec)
        if deterministic_bank:
            chosen = range(factor - 1)
        else:
            chosen = rng.choice(n_bank, size=factor - 1, replace=factor - 1 > n_bank)
        for t in chosen:
            _, fn = TRANSFORM_BANK[int(t)]
            out.append(
                Record(
                    image=fn(rec.image),
                    label=rec.label.copy(),
                    source_path=rec.source_path,
                    origin="augmented",
                )
            )
    return LabeledImageSet(classes=list(dataset.classes), records=out)


def write_manifest(path, splits_by_name, classes):
    """CSV manifest: source_path,class,split,origin (one row per record)."""
    lines = ["source_path,class,split,origin"]
    for split_name, dataset in splits_by_name.items():
        for rec in dataset.records:
            cls = classes[int(np.argmax(rec.label))]
            lines.append(f"{rec.source_path},{cls},{split_name},{rec.origin}")
    Path(path).write_text("\n".join(lines) + "\n")
