"""Post-hoc explanations: Grad-CAM heatmaps, LIME superpixel regression and
Kernel SHAP attributions, plus overlay rendering.

Perturbation methods segment the image into a deterministic rectangular
grid, mask segments with the image's mean color (or flat gray) and query
the model on the masked variants. Solvers run in float64.
"""

from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from .errors import ConfigError, ShapeError
from .imageops import bilinear_resize

OVERLAY_ALPHA = 0.45
LIME_KERNEL_WIDTH = 0.25
LIME_RIDGE = 1e-3
SHAP_EXACT_MAX_SEGMENTS = 10


@dataclass
class Heatmap:
    values: np.ndarray  # H x W in [0, 1]
    target_class: int


@dataclass
class Segmentation:
    labels: np.ndarray  # H x W int segment ids, 0..num_segments-1
    num_segments: int


@dataclass
class Attribution:
    weights: np.ndarray  # signed, one per segment
    intercept: float
    target_class: int
    r2: Optional[float] = None  # LIME fit diagnostic
    efficiency_residual: Optional[float] = None  # SHAP: |sum(phi) - (v_full - v_empty)|
    segmentation: Optional[Segmentation] = None


def _predict_probs(model, images):
    """Model query: a ModelGraph or any callable batch -> probability rows."""
    if hasattr(model, "forward"):
        return model.forward(images)
    return model(images)


def grad_cam(model, image, target_class):
    """ReLU of gradient-weighted last-conv activations, max-normalized and
    upsampled to the input size. An all-zero map stays all-zero."""
    image = np.ascontiguousarray(image, dtype=np.float32)
    logits = model.forward_logits(image[None])
    dlogits = np.zeros_like(logits)
    dlogits[0, target_class] = 1.0
    model.backward(dlogits)
    acts = model.feature_activations()[0].astype(np.float64)  # C x h x w
    grads = model.feature_gradient()[0].astype(np.float64)
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * acts).sum(axis=0), 0.0)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    h, w = image.shape[1], image.shape[2]
    upsampled = bilinear_resize(cam[None].astype(np.float32), h, w)[0]
    return Heatmap(values=np.clip(upsampled, 0.0, 1.0), target_class=int(target_class))


def grid_segments(image, g):
    """g x g near-equal rectangular tiles; remainder pixels go to the last
    row/column of tiles."""
    h, w = image.shape[1], image.shape[2]
    if g < 1:
        raise ConfigError(f"segment grid must be >= 1, got {g}")
    if g > min(h, w):
        raise ConfigError(f"segment grid {g} exceeds image size {h}x{w}")
    labels = np.empty((h, w), dtype=np.int64)
    hs = h // g
    ws = w // g
    for i in range(g):
        y0 = i * hs
        y1 = (i + 1) * hs if i < g - 1 else h
        for j in range(g):
            x0 = j * ws
            x1 = (j + 1) * ws if j < g - 1 else w
            labels[y0:y1, x0:x1] = i * g + j
    return Segmentation(labels=labels, num_segments=g * g)


def mask_segments(image, segmentation, keep, fill="mean_color"):
    """Copy kept segments, replace dropped ones with the image's per-channel
    mean color (or 0.5 gray)."""
    keep = np.asarray(keep)
    if keep.shape[0] != segmentation.num_segments:
        raise ShapeError(
            f"mask_segments: keep vector length {keep.shape[0]} != {segmentation.num_segments} segments"
        )
    if fill == "mean_color":
        fill_pixel = image.mean(axis=(1, 2)).astype(np.float32)
    elif fill == "gray":
        fill_pixel = np.full(image.shape[0], 0.5, dtype=np.float32)
    else:
        raise ConfigError(f"unknown fill mode {fill!r}")
    dropped = ~keep.astype(bool)[segmentation.labels]  # H x W
    out = image.copy()
    out[:, dropped] = fill_pixel[:, None]
    return out


def _batched_value(model, image, segmentation, keeps, target_class, batch=64):
    """v(keep) for each keep-vector row: target-class probability on the
    masked image (mean-color fill)."""
    values = np.empty(len(keeps), dtype=np.float64)
    for start in range(0, len(keeps), batch):
        chunk = keeps[start : start + batch]
        masked = np.stack([mask_segments(image, segmentation, k) for k in chunk])
        probs = _predict_probs(model, masked)
        values[start : start + len(chunk)] = probs[:, target_class]
    return values


def lime_explain(model, image, segmentation, n_samples, target_class, rng):
    """Fit a kernel-weighted ridge surrogate of the target-class probability
    on Bernoulli(0.5) keep-vectors (the all-ones vector always included)."""
    s = segmentation.num_segments
    if n_samples < s + 1:
        raise ConfigError(f"LIME needs n_samples >= S+1 = {s + 1}, got {n_samples}")
    keeps = np.ones((n_samples, s), dtype=np.int64)
    keeps[1:] = rng.integers(0, 2, size=(n_samples - 1, s))
    y = _batched_value(model, image, segmentation, keeps, target_class)

    dropped_fraction = 1.0 - keeps.mean(axis=1)
    weights = np.exp(-(dropped_fraction**2) / LIME_KERNEL_WIDTH**2)

    x = np.column_stack([keeps.astype(np.float64), np.ones(n_samples)])
    xtw = x.T * weights
    a = xtw @ x
    a[np.arange(s), np.arange(s)] += LIME_RIDGE  # intercept unpenalized
    b = xtw @ y
    try:
        beta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return Attribution(
            weights=np.zeros(s),
            intercept=0.0,
            target_class=int(target_class),
            r2=0.0,
            segmentation=segmentation,
        )
    fitted = x @ beta
    y_mean = np.average(y, weights=weights)
    ss_tot = float(np.sum(weights * (y - y_mean) ** 2))
    ss_res = float(np.sum(weights * (y - fitted) ** 2))
    r2 = 0.0 if ss_tot < 1e-12 else 1.0 - ss_res / ss_tot
    return Attribution(
        weights=beta[:s],
        intercept=float(beta[s]),
        target_class=int(target_class),
        r2=float(r2),
        segmentation=segmentation,
    )


def _solve_constrained_wls(z, weights, y, v_empty, v_full):
    """Minimize sum_i w_i (y_i - v_empty - z_i . phi)^2 subject to
    sum(phi) = v_full - v_empty, via the KKT system."""
    s = z.shape[1]
    delta = v_full - v_empty
    if z.shape[0] == 0:  # only boundary coalitions exist (S == 1)
        return np.full(s, delta / s)
    ztw = z.T * weights
    a = np.zeros((s + 1, s + 1))
    a[:s, :s] = ztw @ z
    a[:s, s] = 1.0
    a[s, :s] = 1.0
    rhs = np.zeros(s + 1)
    rhs[:s] = ztw @ (y - v_empty)
    rhs[s] = delta
    solution = np.linalg.solve(a, rhs)
    return solution[:s]


def shap_kernel_weight(s_total, size):
    """Shapley kernel weight of an interior coalition of the given size."""
    return (s_total - 1) / (comb(s_total, size) * size * (s_total - size))


def shap_values_from_value_function(value_fn, num_segments, n_samples=None, rng=None):
    """Kernel SHAP solver over an arbitrary coalition value function.

    Exact mode (num_segments <= 10 or n_samples None): enumerate every
    interior coalition with its Shapley-kernel weight. Sampling mode: draw
    n_samples coalitions with kernel-proportional size probabilities. The
    boundary coalitions enter through the efficiency constraint either way.
    """
    s = num_segments
    v_empty = float(value_fn(np.zeros(s, dtype=np.int64)))
    v_full = float(value_fn(np.ones(s, dtype=np.int64)))

    if s == 1:
        phi = np.array([v_full - v_empty])
        return phi, v_empty, abs(phi.sum() - (v_full - v_empty))

    exact = s <= SHAP_EXACT_MAX_SEGMENTS or n_samples is None
    if exact:
        rows = []
        weights = []
        for code in range(1, 2**s - 1):
            bits = (code >> np.arange(s)) & 1
            rows.append(bits)
            weights.append(shap_kernel_weight(s, int(bits.sum())))
        z = np.array(rows, dtype=np.float64)
        weights = np.array(weights)
    else:
        if rng is None:
            raise ConfigError("sampled kernel SHAP needs an rng")
        sizes = np.arange(1, s)
        size_probs = (s - 1) / (sizes * (s - sizes))
        size_probs = size_probs / size_probs.sum()
        rows = []
        for _ in range(n_samples):
            size = int(rng.choice(sizes, p=size_probs))
            members = rng.choice(s, size=size, replace=False)
            bits = np.zeros(s, dtype=np.int64)
            bits[members] = 1
            rows.append(bits)
        z = np.array(rows, dtype=np.float64)
        weights = np.ones(len(rows))

    y = np.array([float(value_fn(row.astype(np.int64))) for row in z])
    phi = _solve_constrained_wls(z, weights, y, v_empty, v_full)
    residual = abs(float(phi.sum()) - (v_full - v_empty))
    return phi, v_empty, residual


def kernel_shap(model, image, segmentation, n_samples, target_class, rng):
    """Shapley attributions of the target-class probability over segments;
    v(keep) masks dropped segments with the mean color."""
    cache = {}

    def value_fn(keep):
        key = tuple(int(b) for b in keep)
        if key not in cache:
            cache[key] = _batched_value(
                model, image, segmentation, np.asarray(keep)[None], target_class
            )[0]
        return cache[key]

    phi, v_empty, residual = shap_values_from_value_function(
        value_fn, segmentation.num_segments, n_samples=n_samples, rng=rng
    )
    return Attribution(
        weights=phi,
        intercept=v_empty,
        target_class=int(target_class),
        efficiency_residual=residual,
        segmentation=segmentation,
    )


def _jet(values):
    """Blue-to-red colormap on [0, 1]: 3 x H x W."""
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return np.stack([r, g, b]).astype(np.float32)


def _segment_boundaries(labels):
    """Pixels whose right/down neighbor has a different segment id."""
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edge[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    edge[:-1, :] |= labels[:-1, :] != labels[1:, :]
    edge[1:, :] |= labels[:-1, :] != labels[1:, :]
    return edge


def render_overlay(image, explanation, out_path):
    """Blend a jet heatmap (Heatmap) or signed segment tints with yellow
    outlines around positive segments (Attribution) over the image; write a
    PNG and return the blended array."""
    image = np.ascontiguousarray(image, dtype=np.float32)
    if isinstance(explanation, Heatmap):
        overlay = _jet(explanation.values)
        out = (1.0 - OVERLAY_ALPHA) * image + OVERLAY_ALPHA * overlay
    elif isinstance(explanation, Attribution):
        if explanation.segmentation is None:
            raise ConfigError("attribution overlay needs the segmentation attached")
        labels = explanation.segmentation.labels
        w = np.asarray(explanation.weights, dtype=np.float64)
        peak = np.abs(w).max()
        scaled = w / peak if peak > 0 else w
        per_pixel = scaled[labels]  # H x W signed strength
        positive = per_pixel > 0
        tint = np.zeros((3,) + labels.shape, dtype=np.float32)
        tint[0][positive] = 1.0  # red tint for positive weights
        tint[2][~positive] = 1.0  # blue for negative
        alpha = (OVERLAY_ALPHA * np.abs(per_pixel)).astype(np.float32)
        out = (1.0 - alpha) * image + alpha * tint
        outline = _segment_boundaries(labels) & (w[labels] > 0)
        out[0, outline] = 1.0
        out[1, outline] = 1.0
        out[2, outline] = 0.0
    else:
        raise ConfigError(f"cannot render {type(explanation).__name__}")
    out = np.clip(out, 0.0, 1.0)
    rgb = (out * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    return out
