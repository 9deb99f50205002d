"""Network operations on autodiff tensors: convolutions, batch
normalization, affine layers, pooling, losses, and the gradient reversal
node.

Convolutions are cross-correlations in NCHW layout.  The 3x3 kernels go
through a strided patch view plus one tensordot; 1x1 kernels collapse to a
channel matmul; depthwise kernels use a shift-and-add loop over taps.  All
backward rules scatter into a padded gradient buffer and crop.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, _make, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x[N,F] @ weight[G,F]^T + bias[G]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-d input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear feature axis mismatch: input has {x.shape[1]} features "
            f"(axis 1), weight expects {weight.shape[1]}"
        )
    data = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"linear bias shape {bias.shape} does not match output width {weight.shape[0]}"
            )
        data = data + bias.data

    if bias is None:

        def backward_fn(g):
            return g @ weight.data, g.T @ x.data

        return _make(data, (x, weight), backward_fn)

    def backward_fn(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return _make(data, (x, weight, bias), backward_fn)


def _check_conv_geometry(x, kernel, stride, padding, depthwise):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv kernel must be 4-d, got {kernel.shape}")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"padding must be nonnegative, got {padding}")
    n, c, h, w = x.shape
    if depthwise:
        if kernel.shape[1] != 1:
            raise ShapeError(
                f"depthwise kernel axis 1 must be 1, got {kernel.shape[1]}"
            )
        if kernel.shape[0] != c:
            raise ShapeError(
                f"depthwise channel mismatch: input has {c} channels (axis 1), "
                f"kernel has {kernel.shape[0]} (axis 0)"
            )
    elif kernel.shape[1] != c:
        raise ShapeError(
            f"conv channel mismatch: input has {c} channels (axis 1), "
            f"kernel expects {kernel.shape[1]} (axis 1)"
        )
    kh, kw = kernel.shape[2], kernel.shape[3]
    if kh > h + 2 * padding:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {h + 2 * padding} (axis 2)")
    if kw > w + 2 * padding:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {w + 2 * padding} (axis 3)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    return ho, wo


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _patch_view(xpad: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    """Read-only strided view (N, C, kh, kw, Ho, Wo) over padded input."""
    s = xpad.strides
    return np.lib.stride_tricks.as_strided(
        xpad,
        shape=xpad.shape[:2] + (kh, kw, ho, wo),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False,
    )


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate x[N,C,H,W] with kernel[K,C,kh,kw] -> [N,K,H',W']."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    ho, wo = _check_conv_geometry(x.data, kernel.data, stride, padding, depthwise=False)
    n, c, h, w = x.shape
    k, _, kh, kw = kernel.shape

    if kh == 1 and kw == 1:
        # pointwise conv is one batched matmul over flattened pixels
        xs = x.data[:, :, ::stride, ::stride] if (stride > 1 or padding > 0) else x.data
        if padding > 0:
            xs = _pad_hw(x.data, padding)[:, :, ::stride, ::stride]
        hs, ws = xs.shape[2], xs.shape[3]
        x3 = np.ascontiguousarray(xs).reshape(n, c, hs * ws)
        w2 = kernel.data.reshape(k, c)
        out = np.matmul(w2[None], x3).reshape(n, k, hs, ws)

        def backward_fn(g):
            g3 = np.ascontiguousarray(g).reshape(n, k, hs * ws)
            dw2 = np.tensordot(g3, x3, axes=([0, 2], [0, 2]))
            dxs = np.matmul(w2.T[None], g3).reshape(n, c, hs, ws)
            if stride == 1 and padding == 0:
                dx = dxs
            else:
                dxpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
                dxpad[:, :, ::stride, ::stride] = dxs
                dx = dxpad[:, :, padding:padding + h, padding:padding + w].copy()
            return dx, dw2.reshape(k, c, 1, 1)

        return _make(out, (x, kernel), backward_fn)

    xpad = _pad_hw(x.data, padding)
    view = _patch_view(xpad, kh, kw, stride, ho, wo)
    out = np.tensordot(view, kernel.data, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward_fn(g):
        dk = np.tensordot(g, view, axes=([0, 2, 3], [0, 4, 5]))
        dxpad = np.zeros_like(xpad)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                dxpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        dx = dxpad if padding == 0 else dxpad[:, :, padding:padding + h, padding:padding + w]
        return np.ascontiguousarray(dx), dk

    return _make(out, (x, kernel), backward_fn)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Convolve each channel with its own kernel[C,1,kh,kw] -> [N,C,H',W']."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    ho, wo = _check_conv_geometry(x.data, kernel.data, stride, padding, depthwise=True)
    n, c, h, w = x.shape
    _, _, kh, kw = kernel.shape

    xpad = _pad_hw(x.data, padding)
    out = np.zeros((n, c, ho, wo))
    tmp = np.empty_like(out)
    for i in range(kh):
        for j in range(kw):
            window = xpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            np.multiply(window, kernel.data[:, 0, i, j][None, :, None, None], out=tmp)
            out += tmp

    def backward_fn(g):
        dk = np.zeros_like(kernel.data)
        dxpad = np.zeros_like(xpad)
        buf = np.empty_like(g)
        for i in range(kh):
            for j in range(kw):
                sl_i = slice(i, i + stride * ho, stride)
                sl_j = slice(j, j + stride * wo, stride)
                dk[:, 0, i, j] = np.einsum("nchw,nchw->c", g,
                                           xpad[:, :, sl_i, sl_j], optimize=True)
                np.multiply(g, kernel.data[:, 0, i, j][None, :, None, None], out=buf)
                dxpad[:, :, sl_i, sl_j] += buf
        dx = dxpad if padding == 0 else dxpad[:, :, padding:padding + h, padding:padding + w].copy()
        return dx, dk

    return _make(out, (x, kernel), backward_fn)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must divide ``size``."""
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d: spatial dims {h}x{w} not divisible by {size}")
    ho, wo = h // size, w // size
    windows = x.data.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(n, c, ho, wo, size * size)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dx = dflat.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(dx.reshape(n, c, h, w)),)

    return _make(out, (x,), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C], mean over the spatial axes."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    scale = 1.0 / (h * w)

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] * scale, (n, c, h, w)).copy(),)

    return _make(out, (x,), backward_fn)


class BNState:
    """Affine parameters plus running statistics for one BN layer.

    Running statistics are plain arrays outside the autodiff graph; only
    gamma/beta are learnable.  Variances are population (biased) variances
    throughout so that the adaptation fixed-point |mu_t - mu_batch| =
    (1-eta)^t |mu_0 - mu_batch| holds exactly for both moments.
    """

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


def batchnorm2d(x: Tensor, state: BNState, mode: str = "train",
                momentum: Optional[float] = None) -> Tensor:
    """Per-channel normalization of x[N,C,H,W].

    train: normalize by batch statistics, blend them into the running
    statistics with the train momentum.  eval: normalize by running
    statistics (pure function).  adapt: normalize by batch statistics,
    blend with the given momentum (eta), and return a detached tensor;
    no gradients are produced in adapt mode.
    """
    if mode not in ("train", "eval", "adapt"):
        raise ConfigError(f"unknown batchnorm mode {mode!r}")
    n, c, h, w = x.shape
    if c != state.channels:
        raise ShapeError(
            f"batchnorm channel mismatch: input has {c} channels (axis 1), state has {state.channels}"
        )
    gamma, beta = state.gamma, state.beta
    gm = gamma.data[None, :, None, None]
    bt = beta.data[None, :, None, None]

    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        scale = (gamma.data * inv)[None, :, None, None]
        shift = (beta.data - state.running_mean * gamma.data * inv)[None, :, None, None]
        out = x.data * scale
        out += shift
        rm = state.running_mean[None, :, None, None]

        def backward_fn(g):
            xhat = (x.data - rm) * inv[None, :, None, None]
            dgamma = np.einsum("nchw,nchw->c", g, xhat, optimize=True)
            return g * scale, dgamma, g.sum(axis=(0, 2, 3))

        return _make(out, (x, gamma, beta), backward_fn)

    m = n * h * w
    if m < 2:
        raise ContractError(
            f"batchnorm {mode} mode needs at least 2 values per channel, got {m}"
        )
    mu = x.data.mean(axis=(0, 2, 3))
    xhat = x.data - mu[None, :, None, None]
    var = np.einsum("nchw,nchw->c", xhat, xhat, optimize=True) / m
    rho = state.momentum if momentum is None else momentum
    state.running_mean = (1.0 - rho) * state.running_mean + rho * mu
    state.running_var = (1.0 - rho) * state.running_var + rho * var

    inv = 1.0 / np.sqrt(var + state.eps)
    xhat *= inv[None, :, None, None]
    out = xhat * gm
    out += bt

    if mode == "adapt":
        return Tensor(out)

    def backward_fn(g):
        dgamma = np.einsum("nchw,nchw->c", g, xhat, optimize=True)
        dbeta = g.sum(axis=(0, 2, 3))
        dx = g * gm
        s1 = dx.sum(axis=(0, 2, 3))
        s2 = np.einsum("nchw,nchw->c", dx, xhat, optimize=True)
        dx -= (s1 / m)[None, :, None, None]
        dx -= xhat * (s2 / m)[None, :, None, None]
        dx *= inv[None, :, None, None]
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), backward_fn)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with log-sum-exp stabilization."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (logits,), backward_fn)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise
    softmax of ``logits`` (fused, stabilized)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def backward_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _make(np.float64(loss), (logits,), backward_fn)


def grl(x: Tensor, lam: float) -> Tensor:
    """Gradient reversal: identity forward, upstream scaled by -lam in backward."""
    if lam < 0:
        raise ConfigError(f"gradient reversal strength must be >= 0, got {lam}")
    lam = float(lam)
    return _make(x.data, (x,), lambda g: ((-lam) * g,))
