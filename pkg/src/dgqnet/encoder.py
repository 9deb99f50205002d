"""Feature encoder, classification head, and domain discriminator.

The encoder is a scaled-down inverted-residual backbone: a strided stem,
six expand/depthwise/project blocks with skip connections where stride and
width allow, a pointwise projection to the feature width, and global
average pooling.  The discriminator sits behind a gradient reversal node
so its training signal pushes the encoder toward domain-invariant
features.

Every layer draws its initial weights from the rng passed to the model
constructor in a fixed order, so two models built from equal-seeded rngs
have identical parameters regardless of which branches are enabled later.
"""

from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import (
    BNState,
    batchnorm2d,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
    grl,
    linear,
)
from .quantum import QuantumLayer
from .tensor import Tensor, mean_, relu, relu6, sum_

DEFAULT_BLOCKS: List[Tuple[int, int, int]] = [
    (1, 16, 1),
    (4, 24, 2),
    (4, 24, 1),
    (4, 48, 2),
    (4, 48, 1),
    (4, 96, 2),
]
FEATURE_DIM = 256
MIN_INPUT = 32


def _he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _glorot_uniform(rng, shape):
    fan_out, fan_in = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng):
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(_he_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in),
                             requires_grad=True)
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.stride, self.padding)

    def parameters(self, prefix):
        return [(prefix + ".weight", self.weight)]


class DepthwiseConv2d:
    def __init__(self, channels, kernel, stride, padding, rng):
        self.weight = Tensor(_he_uniform(rng, (channels, 1, kernel, kernel),
                                         kernel * kernel),
                             requires_grad=True)
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return depthwise_conv2d(x, self.weight, self.stride, self.padding)

    def parameters(self, prefix):
        return [(prefix + ".weight", self.weight)]


class BatchNorm2d:
    def __init__(self, channels):
        self.state = BNState(channels)

    def __call__(self, x, mode, momentum=None):
        return batchnorm2d(x, self.state, mode=mode, momentum=momentum)

    def parameters(self, prefix):
        return [(prefix + ".gamma", self.state.gamma),
                (prefix + ".beta", self.state.beta)]

    def buffers(self, prefix):
        return [(prefix + ".running_mean", self.state),
                (prefix + ".running_var", self.state)]


class Linear:
    def __init__(self, in_features, out_features, rng):
        self.weight = Tensor(_glorot_uniform(rng, (out_features, in_features)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def parameters(self, prefix):
        return [(prefix + ".weight", self.weight), (prefix + ".bias", self.bias)]


class InvertedResidual:
    """expand 1x1 -> depthwise 3x3 -> project 1x1, skip when shape-preserving.

    The expand stage is omitted at expansion factor 1, matching the usual
    narrow first block.
    """

    def __init__(self, in_ch, out_ch, expansion, stride, rng):
        mid = in_ch * expansion
        self.expand = None
        self.expand_bn = None
        if expansion != 1:
            self.expand = Conv2d(in_ch, mid, 1, 1, 0, rng)
            self.expand_bn = BatchNorm2d(mid)
        self.depthwise = DepthwiseConv2d(mid, 3, stride, 1, rng)
        self.depthwise_bn = BatchNorm2d(mid)
        self.project = Conv2d(mid, out_ch, 1, 1, 0, rng)
        self.project_bn = BatchNorm2d(out_ch)
        self.use_skip = stride == 1 and in_ch == out_ch

    def __call__(self, x, mode, momentum=None):
        h = x
        if self.expand is not None:
            h = relu6(self.expand_bn(self.expand(h), mode, momentum))
        h = relu6(self.depthwise_bn(self.depthwise(h), mode, momentum))
        h = self.project_bn(self.project(h), mode, momentum)
        return x + h if self.use_skip else h

    def _parts(self):
        parts = []
        if self.expand is not None:
            parts += [("expand", self.expand), ("expand_bn", self.expand_bn)]
        parts += [("depthwise", self.depthwise), ("depthwise_bn", self.depthwise_bn),
                  ("project", self.project), ("project_bn", self.project_bn)]
        return parts

    def parameters(self, prefix):
        out = []
        for name, part in self._parts():
            out += part.parameters(f"{prefix}.{name}")
        return out

    def buffers(self, prefix):
        out = []
        for name, part in self._parts():
            if isinstance(part, BatchNorm2d):
                out += part.buffers(f"{prefix}.{name}")
        return out


class Encoder:
    def __init__(self, stem_channels=16, blocks=None, feature_dim=FEATURE_DIM,
                 rng=None):
        if rng is None:
            rng = np.random.default_rng()
        blocks = DEFAULT_BLOCKS if blocks is None else blocks
        if stem_channels < 1 or feature_dim < 1:
            raise ConfigError("channel counts must be positive")
        self.stem = Conv2d(1, stem_channels, 3, 2, 1, rng)
        self.stem_bn = BatchNorm2d(stem_channels)
        self.blocks = []
        ch = stem_channels
        for expansion, out_ch, stride in blocks:
            if out_ch < 1 or expansion < 1:
                raise ConfigError(f"bad block spec ({expansion}, {out_ch}, {stride})")
            self.blocks.append(InvertedResidual(ch, out_ch, expansion, stride, rng))
            ch = out_ch
        self.head = Conv2d(ch, feature_dim, 1, 1, 0, rng)
        self.head_bn = BatchNorm2d(feature_dim)
        self.feature_dim = feature_dim

    def __call__(self, x, mode="train", momentum=None):
        if x.ndim != 4:
            raise ShapeError(f"encoder expects NCHW input, got {x.shape}")
        if x.shape[2] < MIN_INPUT or x.shape[3] < MIN_INPUT:
            raise ShapeError(
                f"input {x.shape[2]}x{x.shape[3]} too small for the stride plan, "
                f"need at least {MIN_INPUT}x{MIN_INPUT}"
            )
        h = relu6(self.stem_bn(self.stem(x), mode, momentum))
        for block in self.blocks:
            h = block(h, mode, momentum)
        h = relu6(self.head_bn(self.head(h), mode, momentum))
        return global_avg_pool(h)

    def _parts(self):
        parts = [("stem", self.stem), ("stem_bn", self.stem_bn)]
        parts += [(f"block{i}", b) for i, b in enumerate(self.blocks)]
        parts += [("head", self.head), ("head_bn", self.head_bn)]
        return parts

    def parameters(self, prefix="encoder"):
        out = []
        for name, part in self._parts():
            out += part.parameters(f"{prefix}.{name}")
        return out

    def buffers(self, prefix="encoder"):
        out = []
        for name, part in self._parts():
            if hasattr(part, "buffers"):
                out += part.buffers(f"{prefix}.{name}")
        return out


class Discriminator:
    """Domain classifier behind a gradient reversal node."""

    def __init__(self, feature_dim, domains, hidden=64, rng=None):
        if domains < 2:
            raise ConfigError(f"discriminator needs >= 2 domains, got {domains}")
        self.hidden = Linear(feature_dim, hidden, rng)
        self.out = Linear(hidden, domains, rng)
        self.domains = domains

    def __call__(self, h, lam):
        g = grl(h, lam)
        return self.out(relu(self.hidden(g)))

    def parameters(self, prefix="discriminator"):
        return (self.hidden.parameters(f"{prefix}.hidden")
                + self.out.parameters(f"{prefix}.out"))


def feature_norm_loss(h: Tensor) -> Tensor:
    """Mean squared L2 norm of the feature rows."""
    return mean_(sum_(h * h, axis=1))


class DGQModel:
    """Encoder + quantum enhancement + classifier + domain discriminator.

    ``use_quantum`` and ``use_adversarial`` only gate the forward pass;
    every branch is always constructed, in a fixed order, so ablations
    share bit-identical initialization with the full model.
    """

    def __init__(self, feature_dim=FEATURE_DIM, domains=3, classes=2,
                 stem_channels=16, blocks=None, qubits=8, depth=2, alpha=0.1,
                 use_quantum=True, use_adversarial=True, seed=0):
        if feature_dim < qubits:
            raise ConfigError(
                f"feature dim {feature_dim} must be >= qubit count {qubits}"
            )
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(stem_channels, blocks, feature_dim, rng)
        self.classifier = Linear(feature_dim, classes, rng)
        self.discriminator = Discriminator(feature_dim, domains, rng=rng)
        self.quantum = QuantumLayer(feature_dim, qubits, depth, alpha, rng)
        self.use_quantum = use_quantum
        self.use_adversarial = use_adversarial
        self.domains = domains

    def encode(self, x, mode="train", momentum=None):
        return self.encoder(x, mode, momentum)

    def enhance(self, h):
        return self.quantum.forward(h) if self.use_quantum else h

    def classify(self, h_prime):
        return self.classifier(h_prime)

    def discriminate(self, h, lam):
        return self.discriminator(h, lam)

    def forward(self, x, mode="eval", lam=0.0):
        """Returns (class logits, domain logits or None, h, h')."""
        h = self.encode(x, mode)
        h_prime = self.enhance(h)
        logits = self.classify(h_prime)
        dom_logits = self.discriminate(h, lam) if self.use_adversarial else None
        return logits, dom_logits, h, h_prime

    def parameters(self):
        return (self.encoder.parameters("encoder")
                + self.classifier.parameters("classifier")
                + self.discriminator.parameters("discriminator")
                + self.quantum.parameters())

    def named_arrays(self):
        """Every persistent array: trainable parameters plus BN statistics."""
        out = [(name, t.data) for name, t in self.parameters()]
        for name, state in self.encoder.buffers("encoder"):
            if name.endswith("running_mean"):
                out.append((name, state.running_mean))
            else:
                out.append((name, state.running_var))
        return out

    def load_arrays(self, arrays: dict):
        """Install checkpoint arrays by name; shapes must match exactly."""
        current = {name: i for i, (name, _) in enumerate(self.parameters())}
        params = self.parameters()
        seen = set()
        for name, value in arrays.items():
            if name in current:
                t = params[current[name]][1]
                if t.data.shape != value.shape:
                    raise ShapeError(
                        f"checkpoint array {name} has shape {value.shape}, "
                        f"model expects {t.data.shape}"
                    )
                t.data = value.astype(np.float64).copy()
            elif name.endswith(".running_mean") or name.endswith(".running_var"):
                self._load_buffer(name, value)
            else:
                raise ConfigError(f"checkpoint array {name} matches no model state")
            seen.add(name)
        missing = [n for n, _ in self.named_arrays() if n not in seen]
        if missing:
            raise ConfigError(f"checkpoint is missing arrays: {missing[:4]}"
                              + ("..." if len(missing) > 4 else ""))

    def _load_buffer(self, name, value):
        for bname, state in self.encoder.buffers("encoder"):
            if bname == name:
                target = state.running_mean if name.endswith("running_mean") else None
                if target is None:
                    if state.running_var.shape != value.shape:
                        raise ShapeError(f"checkpoint array {name} shape mismatch")
                    state.running_var = value.astype(np.float64).copy()
                else:
                    if target.shape != value.shape:
                        raise ShapeError(f"checkpoint array {name} shape mismatch")
                    state.running_mean = value.astype(np.float64).copy()
                return
        raise ConfigError(f"checkpoint array {name} matches no model state")

    def parameter_count(self):
        return sum(t.data.size for _, t in self.parameters())

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()
