"""Synthetic colored-blob image set for training sanity runs and the test
suite: three classes distinguished by blob color on a dark noisy
background. Deliberately easy, so a tiny model at small learning rates can
separate it within a few hundred optimizer steps.
"""

import numpy as np

from .data import LabeledImageSet, Record

BLOB_CLASSES = ("blob_blue", "blob_green", "blob_red")
_CLASS_COLORS = {
    "blob_blue": (0.05, 0.15, 0.95),
    "blob_green": (0.05, 0.95, 0.15),
    "blob_red": (0.95, 0.10, 0.05),
}


def make_blob_dataset(n_images=600, size=64, seed=0, noise=0.03):
    """Evenly-sized classes of `size` x `size` images, one soft round blob
    per image with class-specific color, jittered center/radius, plus
    Gaussian pixel noise. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    classes = list(BLOB_CLASSES)
    records = []
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    per_class = n_images // len(classes)
    counts = [per_class] * len(classes)
    for i in range(n_images - per_class * len(classes)):
        counts[i] += 1
    for ci, cls in enumerate(classes):
        color = np.array(_CLASS_COLORS[cls], dtype=np.float32)
        for k in range(counts[ci]):
            cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
            radius = rng.uniform(0.22 * size, 0.38 * size)
            dist2 = (yy - cy) ** 2 + (xx - cx) ** 2
            blob = np.exp(-dist2 / (2.0 * (radius / 1.6) ** 2)).astype(np.float32)
            img = np.full((3, size, size), 0.12, dtype=np.float32)
            img += color[:, None, None] * blob[None]
            img += rng.normal(0.0, noise, size=img.shape).astype(np.float32)
            img = np.clip(img, 0.0, 1.0)
            label = np.zeros(len(classes), dtype=np.float32)
            label[ci] = 1.0
            records.append(
                Record(
                    image=img,
                    label=label,
                    source_path=f"synthetic://{cls}/{k:04d}.png",
                    origin="original",
                )
            )
    return LabeledImageSet(classes=classes, records=records)
