"""Desk-scale classifiers: a multi-branch (inception-style) CNN and a
residual CNN, assembled from the layers module.

Both share the skeleton stem -> blocks -> global average pool -> dense ->
softmax. The graph caches per-layer inputs during forward so a backward
pass from the logits can also hand out the last pre-pool feature map and
its gradient (what Grad-CAM consumes).
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .gradcheck import gradient_check
from .layers import (
    ChannelConcat,
    Conv2d,
    Dense,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ReLU,
    ResidualAdd,
    softmax,
)

VARIANTS = ("mini_inception", "mini_resnet")


@dataclass
class ModelConfig:
    variant: str = "mini_inception"
    input_size: Tuple[int, int] = (256, 256)
    channels: List[int] = field(default_factory=lambda: [16, 32])
    num_blocks: int = 2
    num_classes: int = 3

    def validate(self):
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_blocks < 1:
            problems.append(f"num_blocks must be >= 1, got {self.num_blocks}")
        if len(self.channels) != self.num_blocks:
            problems.append(
                f"channels lists {len(self.channels)} widths for {self.num_blocks} blocks"
            )
        if any(c <= 0 for c in self.channels):
            problems.append(f"channel widths must be positive, got {self.channels}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self):
        return {
            "variant": self.variant,
            "input_size": list(self.input_size),
            "channels": list(self.channels),
            "num_blocks": self.num_blocks,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            variant=d["variant"],
            input_size=tuple(d["input_size"]),
            channels=list(d["channels"]),
            num_blocks=int(d["num_blocks"]),
            num_classes=int(d["num_classes"]),
        )


class InceptionBlock(Layer):
    """Four parallel branches concatenated channel-wise:
    1x1 conv | 1x1 -> 3x3 | 1x1 -> 5x5 | 3x3 maxpool -> 1x1, relu after
    every conv. Branch widths are equal quarters of the block width, the
    remainder going to the 1x1 branch."""

    def __init__(self, in_channels, width):
        super().__init__()
        q = width // 4
        w1 = width - 3 * q
        if q == 0:
            raise ConfigError(f"inception block width {width} too small to split into branches")
        self.width = width
        self.b1_conv = Conv2d(in_channels, w1, 1)
        self.b1_relu = ReLU()
        self.b3_reduce = Conv2d(in_channels, q, 1)
        self.b3_relu1 = ReLU()
        self.b3_conv = Conv2d(q, q, 3, padding=1)
        self.b3_relu2 = ReLU()
        self.b5_reduce = Conv2d(in_channels, q, 1)
        self.b5_relu1 = ReLU()
        self.b5_conv = Conv2d(q, q, 5, padding=2)
        self.b5_relu2 = ReLU()
        self.bp_pool = MaxPool2d(3, stride=1, padding=1)
        self.bp_conv = Conv2d(in_channels, q, 1)
        self.bp_relu = ReLU()
        self.concat = ChannelConcat()

    def sublayers(self):
        return (
            ("branch1x1.conv", self.b1_conv),
            ("branch3x3.reduce", self.b3_reduce),
            ("branch3x3.conv", self.b3_conv),
            ("branch5x5.reduce", self.b5_reduce),
            ("branch5x5.conv", self.b5_conv),
            ("branchpool.conv", self.bp_conv),
        )

    def forward(self, x):
        p1 = self.b1_relu.forward(self.b1_conv.forward(x))
        p3 = self.b3_relu2.forward(
            self.b3_conv.forward(self.b3_relu1.forward(self.b3_reduce.forward(x)))
        )
        p5 = self.b5_relu2.forward(
            self.b5_conv.forward(self.b5_relu1.forward(self.b5_reduce.forward(x)))
        )
        pp = self.bp_relu.forward(self.bp_conv.forward(self.bp_pool.forward(x)))
        return self.concat.forward([p1, p3, p5, pp])

    def backward(self, grad):
        g1, g3, g5, gp = self.concat.backward(grad)
        dx = self.b1_conv.backward(self.b1_relu.backward(g1))
        dx = dx + self.b3_reduce.backward(
            self.b3_relu1.backward(self.b3_conv.backward(self.b3_relu2.backward(g3)))
        )
        dx = dx + self.b5_reduce.backward(
            self.b5_relu1.backward(self.b5_conv.backward(self.b5_relu2.backward(g5)))
        )
        dx = dx + self.bp_pool.backward(self.bp_conv.backward(self.bp_relu.backward(gp)))
        return dx


class ResidualBlock(Layer):
    """conv3x3 -> relu -> conv3x3 plus a shortcut, relu after the add.
    The shortcut is the identity unless the width or stride changes, then a
    1x1 projection conv."""

    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_channels, out_channels, 3, padding=1)
        self.add = ResidualAdd()
        self.relu2 = ReLU()
        if in_channels != out_channels or stride != 1:
            self.projection = Conv2d(in_channels, out_channels, 1, stride=stride)
        else:
            self.projection = None

    def sublayers(self):
        subs = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.projection is not None:
            subs.append(("projection", self.projection))
        return tuple(subs)

    def forward(self, x):
        main = self.conv2.forward(self.relu1.forward(self.conv1.forward(x)))
        shortcut = x if self.projection is None else self.projection.forward(x)
        return self.relu2.forward(self.add.forward([main, shortcut]))

    def backward(self, grad):
        g_main, g_short = self.add.backward(self.relu2.backward(grad))
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(g_main)))
        if self.projection is None:
            return dx + g_short
        return dx + self.projection.backward(g_short)


class ModelGraph:
    """Ordered (name, layer) pipeline with a softmax head.

    forward() returns class probabilities; forward_logits() caches per-layer
    inputs and backward() consumes a logits gradient, after which
    feature_activations()/feature_gradient() expose the last pre-pool
    feature map A and dL/dA.
    """

    def __init__(self, config, named_layers, gap_name="gap"):
        self.config = config
        self.variant = config.variant
        self.named_layers = list(named_layers)
        self.layers = [layer for _, layer in self.named_layers]
        self.class_names = [f"class{i}" for i in range(config.num_classes)]
        self.gap_index = next(
            i for i, (name, _) in enumerate(self.named_layers) if name == gap_name
        )
        self._inputs = None
        self._feature_grad = None

    def named_parameters(self):
        params = {}
        for name, layer in self.named_layers:
            for key, value in layer.named_params(name + "."):
                if key in params:
                    raise ShapeError(f"duplicate parameter name {key!r}")
                params[key] = value
        return params

    def named_gradients(self):
        grads = {}
        for name, layer in self.named_layers:
            grads.update(layer.named_grads(name + "."))
        return grads

    def parameter_count(self):
        return int(sum(p.size for p in self.named_parameters().values()))

    def _check_input(self, x):
        h, w = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != h or x.shape[3] != w:
            raise ShapeError(
                f"{self.variant}: expected input Nx3x{h}x{w}, got {tuple(x.shape)}"
            )

    def forward_logits(self, x):
        self._check_input(x)
        self._inputs = []
        out = np.ascontiguousarray(x, dtype=np.float32)
        for layer in self.layers:
            self._inputs.append(out)
            out = layer.forward(out)
        return out

    def forward(self, x):
        return softmax(self.forward_logits(x))

    def backward(self, dlogits):
        if self._inputs is None:
            raise ShapeError("backward called before forward_logits")
        grad = np.ascontiguousarray(dlogits, dtype=np.float32)
        for i in range(len(self.layers) - 1, -1, -1):
            grad = self.layers[i].backward(grad)
            if i == self.gap_index:
                self._feature_grad = grad
        return grad

    def feature_activations(self):
        """Last pre-pool feature map from the most recent forward, N x C x h x w."""
        return self._inputs[self.gap_index]

    def feature_gradient(self):
        """Gradient of the most recent backward's scalar target w.r.t. the
        feature map."""
        return self._feature_grad

    def predict(self, images):
        return self.forward(images)

    def predict_class(self, image):
        """Single 3xHxW image -> (argmax class index, probability row);
        ties break to the lowest index."""
        probs = self.forward(image[None])[0]
        return int(np.argmax(probs)), probs


def _track_spatial(size, kernel, stride, padding):
    h, w = size
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"spatial size underflow: {h}x{w} with kernel {kernel} stride {stride} pad {padding}"
        )
    return ho, wo


def build_mini_inception(config):
    """Stem (conv3x3 stride 2 + relu + maxpool2), inception blocks with
    maxpool2 between them, then GAP -> dense -> softmax."""
    config.validate()
    if config.variant != "mini_inception":
        raise ConfigError(f"build_mini_inception got variant {config.variant!r}")
    size = config.input_size
    layers = []
    stem_width = config.channels[0]
    layers.append(("stem.conv", Conv2d(3, stem_width, 3, stride=2, padding=1)))
    size = _track_spatial(size, 3, 2, 1)
    layers.append(("stem.relu", ReLU()))
    layers.append(("stem.pool", MaxPool2d(2, 2)))
    size = _track_spatial(size, 2, 2, 0)

    in_ch = stem_width
    for b, width in enumerate(config.channels, start=1):
        layers.append((f"block{b}", InceptionBlock(in_ch, width)))
        in_ch = width
        if b < config.num_blocks:
            layers.append((f"pool{b}", MaxPool2d(2, 2)))
            size = _track_spatial(size, 2, 2, 0)
    layers.append(("gap", GlobalAvgPool()))
    layers.append(("head", Dense(in_ch, config.num_classes)))
    return ModelGraph(config, layers)


def build_mini_resnet(config):
    """Stem (conv3x3 + relu + maxpool2), residual blocks with a stride-2
    projection at every width change, then GAP -> dense -> softmax."""
    config.validate()
    if config.variant != "mini_resnet":
        raise ConfigError(f"build_mini_resnet got variant {config.variant!r}")
    size = config.input_size
    layers = []
    stem_width = config.channels[0]
    layers.append(("stem.conv", Conv2d(3, stem_width, 3, padding=1)))
    size = _track_spatial(size, 3, 1, 1)
    layers.append(("stem.relu", ReLU()))
    layers.append(("stem.pool", MaxPool2d(2, 2)))
    size = _track_spatial(size, 2, 2, 0)

    in_ch = stem_width
    for b, width in enumerate(config.channels, start=1):
        stride = 2 if (b > 1 and width != config.channels[b - 2]) else 1
        layers.append((f"block{b}", ResidualBlock(in_ch, width, stride=stride)))
        size = _track_spatial(size, 3, stride, 1)
        in_ch = width
    layers.append(("gap", GlobalAvgPool()))
    layers.append(("head", Dense(in_ch, config.num_classes)))
    return ModelGraph(config, layers)


def build_model(config):
    config.validate()
    if config.variant == "mini_inception":
        return build_mini_inception(config)
    return build_mini_resnet(config)


def init_parameters(model, seed):
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, deterministic
    per seed. Returns the same graph."""
    rng = np.random.default_rng(seed)
    for name, p in sorted(model.named_parameters().items()):
        if name.endswith(".bias"):
            p[...] = 0.0
        else:
            if p.ndim == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
            else:
                fan_in = p.shape[0]
            bound = np.sqrt(6.0 / fan_in)
            p[...] = rng.uniform(-bound, bound, size=p.shape).astype(np.float32)
    return model


class _GraphAsLayer:
    """Adapter so the gradient-check harness can difference a whole graph
    through its logits."""

    def __init__(self, model):
        self.model = model

    def named_params(self, prefix=""):
        return iter(self.model.named_parameters().items())

    def named_grads(self, prefix=""):
        return iter(self.model.named_gradients().items())

    def forward(self, x):
        return self.model.forward_logits(x)

    def backward(self, grad):
        return self.model.backward(grad)


def end_to_end_gradient_check(config, seed, details=False):
    """Finite-difference the whole model through its logits; coordinates
    whose interval crosses a relu kink or pool tie are excluded by the
    harness. Returns the worst relative error."""
    adapter = _GraphAsLayer(build_model(config))
    shape = (2, 3) + tuple(config.input_size)
    return gradient_check(adapter, shape, seed, init_scale=0.4, details=details)
