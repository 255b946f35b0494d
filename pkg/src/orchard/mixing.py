"""CutMix and MixUp batch mixing with Beta-sampled coefficients.

Both mixers pair each sample n with sample perm(n) and emit soft labels.
MixUp blends pixels and labels linearly by lambda; CutMix pastes a
rectangular patch from the partner image and weights the labels by the
exact retained-area fraction. One lambda is drawn per batch.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ShapeError


@dataclass
class MixConfig:
    alpha_mixup: float = 0.0
    alpha_cutmix: float = 0.0
    seed: int = 0

    def validate(self):
        if self.alpha_mixup < 0 or self.alpha_cutmix < 0:
            raise ValueError(
                f"mixing alphas must be >= 0, got ({self.alpha_mixup}, {self.alpha_cutmix})"
            )


@dataclass
class MixedBatch:
    images: np.ndarray
    labels: np.ndarray
    lambda_used: float
    box: Optional[Tuple[int, int, int, int]] = None
    method: str = "none"  # "none" | "mixup" | "cutmix"


def sample_lambda(alpha, rng):
    """Beta(alpha, alpha) via two Gamma(alpha, 1) draws; alpha=0 disables
    mixing and returns exactly 1."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return 1.0
    g1 = rng.gamma(alpha, 1.0)
    g2 = rng.gamma(alpha, 1.0)
    total = g1 + g2
    if total == 0.0:  # both draws underflowed (tiny alpha)
        return 0.5
    return float(g1 / total)


def _check_pair(images, labels, perm):
    if images.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"mixing: batch size mismatch, images N={images.shape[0]} labels N={labels.shape[0]}"
        )
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(images.shape[0])):
        raise ValueError("pairing permutation is not a bijection on batch indices")
    return perm


def mixup(images, labels, lam, perm):
    """out[n] = lam * in[n] + (1 - lam) * in[perm(n)], pixels and labels."""
    perm = _check_pair(images, labels, perm)
    if lam == 1.0:
        return MixedBatch(images=images, labels=labels, lambda_used=1.0, method="mixup")
    lam32 = np.float32(lam)
    mixed_images = lam32 * images + (np.float32(1.0) - lam32) * images[perm]
    mixed_labels = lam32 * labels + (np.float32(1.0) - lam32) * labels[perm]
    return MixedBatch(images=mixed_images, labels=mixed_labels, lambda_used=float(lam), method="mixup")


def cutmix_box(h, w, lam, rng):
    """Sample the patch rectangle for lambda: side = round(dim * sqrt(1-lam)),
    center uniform, clipped to bounds. Returns (x1, y1, x2, y2, lambda_adjusted)
    with lambda_adjusted = 1 - clipped_area / (h * w)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    ratio = np.sqrt(1.0 - lam)
    rw = int(round(w * ratio))
    rh = int(round(h * ratio))
    cx = int(rng.integers(0, w))
    cy = int(rng.integers(0, h))
    x1 = min(max(cx - rw // 2, 0), w)
    y1 = min(max(cy - rh // 2, 0), h)
    x2 = min(max(cx - rw // 2 + rw, 0), w)
    y2 = min(max(cy - rh // 2 + rh, 0), h)
    area = (x2 - x1) * (y2 - y1)
    lam_adj = 1.0 - area / float(h * w)
    return x1, y1, x2, y2, lam_adj


def cutmix(images, labels, lam, perm, rng):
    """Paste the partner's patch inside the sampled box; labels weighted by
    the retained-area fraction of the receiver image."""
    perm = _check_pair(images, labels, perm)
    h, w = images.shape[2], images.shape[3]
    x1, y1, x2, y2, lam_adj = cutmix_box(h, w, lam, rng)
    if x2 <= x1 or y2 <= y1:  # empty patch
        return MixedBatch(
            images=images, labels=labels, lambda_used=1.0, box=(x1, y1, x2, y2), method="cutmix"
        )
    mixed_images = images.copy()
    mixed_images[:, :, y1:y2, x1:x2] = images[perm][:, :, y1:y2, x1:x2]
    lam32 = np.float32(lam_adj)
    mixed_labels = lam32 * labels + (np.float32(1.0) - lam32) * labels[perm]
    return MixedBatch(
        images=mixed_images,
        labels=mixed_labels,
        lambda_used=float(lam_adj),
        box=(x1, y1, x2, y2),
        method="cutmix",
    )


def apply_mixers(images, labels, config, rng):
    """Per-batch dispatch: both alphas on -> coin flip between the mixers;
    one on -> that one; both zero -> bit-identical passthrough."""
    config.validate()
    use_mixup = config.alpha_mixup > 0
    use_cutmix = config.alpha_cutmix > 0
    if not use_mixup and not use_cutmix:
        return MixedBatch(images=images, labels=labels, lambda_used=1.0, method="none")
    if use_mixup and use_cutmix:
        use_mixup = rng.random() < 0.5
        use_cutmix = not use_mixup
    perm = rng.permutation(images.shape[0])
    if use_mixup:
        lam = sample_lambda(config.alpha_mixup, rng)
        return mixup(images, labels, lam, perm)
    lam = sample_lambda(config.alpha_cutmix, rng)
    return cutmix(images, labels, lam, perm, rng)
