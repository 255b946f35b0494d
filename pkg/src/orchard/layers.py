"""Layer zoo with explicit forward/backward passes.

Everything is float32 NCHW (dense layers take N x F). Each layer caches what
its backward needs during forward; backward consumes an upstream gradient
shaped like the forward output and returns the input gradient, storing
parameter gradients in `self.grads`. Convolution uses the cross-correlation
convention (no kernel flip).

The im2col/col2im and pooling inner loops live in orchard.kernels; the
matmuls stay in numpy (BLAS) on both kernel backends.
"""

import numpy as np

from . import kernels
from .errors import ShapeError

LOG_EPS = np.float32(1e-7)  # clamp for log in cross-entropy


def _as_f32(x):
    return np.ascontiguousarray(x, dtype=np.float32)


class Layer:
    """Base class: parameters and their gradients live in name-keyed dicts."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def sublayers(self):
        """(name, layer) pairs of children, for hierarchical parameter names."""
        return ()

    def named_params(self, prefix=""):
        for key, value in self.params.items():
            yield prefix + key, value
        for name, child in self.sublayers():
            yield from child.named_params(prefix + name + ".")

    def named_grads(self, prefix=""):
        for key, value in self.grads.items():
            yield prefix + key, value
        for name, child in self.sublayers():
            yield from child.named_grads(prefix + name + ".")

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


def _check_upstream(grad, expected_shape, name):
    if grad.shape != expected_shape:
        raise ShapeError(
            f"{name}: upstream gradient shape {grad.shape} != forward output shape {expected_shape}"
        )


class Conv2d(Layer):
    """2D cross-correlation with bias. Output H' = (H + 2p - kh)//stride + 1."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.params = {
            "weight": np.zeros(
                (out_channels, in_channels, kernel_size, kernel_size), dtype=np.float32
            ),
            "bias": np.zeros(out_channels, dtype=np.float32),
        }

    def forward(self, x):
        x = _as_f32(x)
        w = self.params["weight"]
        if x.ndim != 4:
            raise ShapeError(f"conv2d: expected NCHW input, got {x.ndim} dims")
        n, c, h, width = x.shape
        if c != self.in_channels:
            raise ShapeError(
                f"conv2d: input channels {c} != weight in_channels {self.in_channels}"
            )
        k, s, p = self.kernel_size, self.stride, self.padding
        if h + 2 * p < k or width + 2 * p < k:
            raise ShapeError(
                f"conv2d: kernel {k} exceeds padded input {h + 2 * p}x{width + 2 * p}"
            )
        if p > 0:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        else:
            xp = x
        cols = kernels.im2col(xp, k, k, s, s)  # (N, C*k*k, L)
        ho = (h + 2 * p - k) // s + 1
        wo = (width + 2 * p - k) // s + 1
        wmat = w.reshape(self.out_channels, -1)
        out = np.matmul(wmat, cols)  # (N, Cout, L)
        out += self.params["bias"][None, :, None]
        self._cache = (cols, x.shape, xp.shape)
        self._out_shape = (n, self.out_channels, ho, wo)
        return out.reshape(self._out_shape)

    def backward(self, grad):
        grad = _as_f32(grad)
        _check_upstream(grad, self._out_shape, "conv2d")
        cols, x_shape, xp_shape = self._cache
        n, cout, ho, wo = grad.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        wmat = self.params["weight"].reshape(cout, -1)
        gflat = grad.reshape(n, cout, ho * wo)

        gw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0)
        self.grads["weight"] = gw.reshape(self.params["weight"].shape)
        self.grads["bias"] = grad.sum(axis=(0, 2, 3))

        dcols = np.matmul(wmat.T, gflat)  # (N, C*k*k, L)
        dxp = kernels.col2im(dcols, x_shape[1], xp_shape[2], xp_shape[3], k, k, s, s)
        if p > 0:
            return np.ascontiguousarray(dxp[:, :, p:-p, p:-p])
        return dxp


class ReLU(Layer):
    def forward(self, x):
        x = _as_f32(x)
        self._mask = x > 0
        return np.where(self._mask, x, np.float32(0))

    def backward(self, grad):
        grad = _as_f32(grad)
        _check_upstream(grad, self._mask.shape, "relu")
        return np.where(self._mask, grad, np.float32(0))


class MaxPool2d(Layer):
    """Max pooling; ties route the gradient to the first row-major argmax.

    `padding` pads with -inf (never wins a window) so an inception pool
    branch can keep the spatial size.
    """

    def __init__(self, kernel_size, stride=None, padding=0):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride if stride is not None else kernel_size
        self.padding = padding

    def forward(self, x):
        x = _as_f32(x)
        k, s, p = self.kernel_size, self.stride, self.padding
        n, c, h, w = x.shape
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"maxpool: window {k} exceeds padded input {h + 2 * p}x{w + 2 * p}")
        if p > 0:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
        else:
            xp = x
        out, argmax = kernels.maxpool_forward(xp, k, s)
        self._argmax = argmax
        self._x_shape = x.shape
        self._xp_shape = xp.shape
        return out

    def backward(self, grad):
        grad = _as_f32(grad)
        _check_upstream(grad, self._argmax.shape, "maxpool")
        hp, wp = self._xp_shape[2], self._xp_shape[3]
        dxp = kernels.maxpool_backward(grad, self._argmax, hp, wp)
        p = self.padding
        if p > 0:
            return np.ascontiguousarray(dxp[:, :, p:-p, p:-p])
        return dxp


class GlobalAvgPool(Layer):
    """N x C x H x W -> N x C spatial mean; backward spreads grad/(H*W)."""

    def forward(self, x):
        x = _as_f32(x)
        self._in_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        grad = _as_f32(grad)
        n, c, h, w = self._in_shape
        _check_upstream(grad, (n, c), "global_avg_pool")
        scale = np.float32(1.0 / (h * w))
        return np.broadcast_to((grad * scale)[:, :, None, None], self._in_shape).copy()


class Dense(Layer):
    """Affine map N x F -> N x K."""

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((in_features, out_features), dtype=np.float32),
            "bias": np.zeros(out_features, dtype=np.float32),
        }

    def forward(self, x):
        x = _as_f32(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"dense: input shape {x.shape} incompatible with weight {self.params['weight'].shape}"
            )
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        grad = _as_f32(grad)
        _check_upstream(grad, (self._x.shape[0], self.out_features), "dense")
        self.grads["weight"] = self._x.T @ grad
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"].T


class ChannelConcat(Layer):
    """Concatenate a list of N x Ci x H x W parts along the channel axis."""

    def forward(self, parts):
        base = parts[0].shape
        for i, part in enumerate(parts[1:], start=1):
            if part.shape[0] != base[0] or part.shape[2:] != base[2:]:
                raise ShapeError(
                    f"channel_concat: part {i} shape {part.shape} does not match part 0 {base} in N/H/W"
                )
        self._splits = np.cumsum([p.shape[1] for p in parts])[:-1]
        self._out_shape = (base[0], int(sum(p.shape[1] for p in parts))) + base[2:]
        return np.concatenate([_as_f32(p) for p in parts], axis=1)

    def backward(self, grad):
        grad = _as_f32(grad)
        _check_upstream(grad, self._out_shape, "channel_concat")
        return [np.ascontiguousarray(g) for g in np.split(grad, self._splits, axis=1)]


class ResidualAdd(Layer):
    """Elementwise a + b; backward duplicates the gradient to both operands."""

    def forward(self, parts):
        a, b = parts
        if a.shape != b.shape:
            raise ShapeError(f"residual_add: operand shapes {a.shape} != {b.shape}")
        self._shape = a.shape
        return _as_f32(a) + _as_f32(b)

    def backward(self, grad):
        grad = _as_f32(grad)
        _check_upstream(grad, self._shape, "residual_add")
        return [grad, grad.copy()]


def softmax(logits):
    """Row softmax, stabilized by max subtraction."""
    logits = _as_f32(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(probs, labels):
    if probs.shape != labels.shape:
        raise ShapeError(
            f"cross_entropy: probs shape {probs.shape} != labels shape {labels.shape}"
        )
    sums = labels.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-5
    if bad.any():
        row = int(np.argmax(bad))
        raise ShapeError(f"cross_entropy: label row {row} sums to {sums[row]:.6f}, not 1")


def cross_entropy(probs, labels):
    """Mean soft-label cross-entropy, -(1/N) sum b*log(max(p, 1e-7))."""
    probs = _as_f32(probs)
    labels = _as_f32(labels)
    _check_labels(probs, labels)
    logp = np.log(np.maximum(probs, LOG_EPS))
    return float(-(labels * logp).sum() / probs.shape[0])


def softmax_cross_entropy(logits, labels):
    """Fused loss: returns (loss, probs, dlogits) with dlogits = (p - b)/N."""
    labels = _as_f32(labels)
    probs = softmax(logits)
    _check_labels(probs, labels)
    loss = cross_entropy(probs, labels)
    dlogits = (probs - labels) / np.float32(logits.shape[0])
    return loss, probs, dlogits


def channel_concat(parts):
    return ChannelConcat().forward(parts)


def residual_add(a, b):
    return ResidualAdd().forward([a, b])
