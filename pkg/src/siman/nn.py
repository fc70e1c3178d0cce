"""Layers with hand-written backward passes, and the ConvNet-S model.

Everything runs in float64 on numpy arrays laid out as (N, C, H, W).
Each layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``grads`` during ``backward``.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .binarize import half_half_binarize, optimal_binarize, sign_binarize_scaled
from .bitkernel import conv_output_size, im2col
from .errors import InvalidArgs, ShapeMismatch

BINARIZERS = ("siman", "siman1", "sign_baseline")


def sign_activation(x) -> np.ndarray:
    """+1 where ``x >= 0``, -1 elsewhere."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def activation_grad_mask(x) -> np.ndarray:
    """Derivative of the piecewise-quadratic sign surrogate.

    ``2 + 2x`` on [-1, 0), ``2 - 2x`` on [0, 1), zero elsewhere.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    neg = (x >= -1) & (x < 0)
    pos = (x >= 0) & (x < 1)
    out[neg] = 2.0 + 2.0 * x[neg]
    out[pos] = 2.0 - 2.0 * x[pos]
    return out


def binarize_filter(w, mode: str) -> tuple[np.ndarray, float]:
    """One filter to (±1 weights, beta).  beta = mean(|w|) in every mode."""
    flat = np.asarray(w, dtype=np.float64).reshape(-1)
    beta = float(np.mean(np.abs(flat)))
    if mode == "siman":
        bits = half_half_binarize(flat).to_pm1()
    elif mode == "siman1":
        bits = optimal_binarize(flat).to_pm1()
    elif mode == "sign_baseline":
        bits = sign_binarize_scaled(flat).bits.astype(np.float64)
    else:
        raise InvalidArgs(f"unknown binarization mode {mode!r}")
    return bits, beta


def binarize_layer_forward(w, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Binarize every output filter of a (C_out, ...) weight tensor.

    Returns ±1 weights with the same shape as ``w`` and a beta per filter.
    """
    w = np.asarray(w, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1)
    out = np.empty_like(flat)
    betas = np.empty(w.shape[0])
    for j, row in enumerate(flat):
        out[j], betas[j] = binarize_filter(row, mode)
    return out.reshape(w.shape), betas


def ste_weight_grad(upstream, weights) -> np.ndarray:
    """Straight-through estimate: the gradient w.r.t. the ±1 proxy is used
    as the gradient w.r.t. the real weights."""
    g = np.asarray(upstream)
    if g.shape != np.shape(weights):
        raise ShapeMismatch(f"gradient shape {g.shape} != weight shape {np.shape(weights)}")
    return g.copy()


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`siman.bitkernel.im2col` (overlapping patches add)."""
    n, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    patches = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


class Layer:
    binarized = False

    def __init__(self, name: str):
        self.name = name
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, training: bool):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Conv2d(Layer):
    """Real-valued convolution without bias, zero padding."""

    def __init__(self, name, c_in, c_out, k=3, stride=1, padding=1):
        super().__init__(name)
        self.k, self.stride, self.padding = k, stride, padding
        self.params["weight"] = np.zeros((c_out, c_in, k, k))

    def forward(self, x, training=True):
        w = self.params["weight"]
        cols, oh, ow = im2col(x, self.k, self.k, self.stride, self.padding)
        self._cache = (x.shape, cols)
        out = cols @ w.reshape(w.shape[0], -1).T
        return out.reshape(x.shape[0], oh, ow, -1).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x_shape, cols = self._cache
        w = self.params["weight"]
        g = grad.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
        self.grads["weight"] = (g.T @ cols).reshape(w.shape)
        dcols = g @ w.reshape(w.shape[0], -1)
        return col2im(dcols, x_shape, self.k, self.k, self.stride, self.padding)


class BinaryConv2d(Layer):
    """Sign-activation, binarized-weight convolution scaled per filter.

    The real input is binarized with sign, padded with -1 and convolved with
    ±1 weights; each output channel is multiplied by its beta.  Backward
    uses the piecewise-quadratic surrogate for the activation sign and a
    straight-through estimate for the weights.
    """

    binarized = True

    def __init__(self, name, c_in, c_out, k=3, stride=1, padding=1, mode="siman"):
        super().__init__(name)
        if mode not in BINARIZERS:
            raise InvalidArgs(f"unknown binarization mode {mode!r}")
        self.k, self.stride, self.padding, self.mode = k, stride, padding, mode
        self.params["weight"] = np.zeros((c_out, c_in, k, k))
        self.betas = np.ones(c_out)
        self.binary_weight = None

    def binarize(self):
        self.binary_weight, self.betas = binarize_layer_forward(self.params["weight"], self.mode)
        return self.binary_weight, self.betas

    def forward(self, x, training=True):
        wb, betas = self.binarize()
        signs = sign_activation(x)
        cols, oh, ow = im2col(signs, self.k, self.k, self.stride, self.padding, pad_value=-1.0)
        self._cache = (x, cols)
        raw = cols @ wb.reshape(wb.shape[0], -1).T
        out = raw.reshape(x.shape[0], oh, ow, -1).transpose(0, 3, 1, 2)
        return out * betas[None, :, None, None]

    def backward(self, grad):
        x, cols = self._cache
        wb = self.binary_weight
        g = (grad * self.betas[None, :, None, None]).transpose(0, 2, 3, 1).reshape(-1, wb.shape[0])
        self.grads["weight"] = ste_weight_grad((g.T @ cols).reshape(wb.shape), wb)
        dcols = g @ wb.reshape(wb.shape[0], -1)
        dsign = col2im(dcols, x.shape, self.k, self.k, self.stride, self.padding)
        return dsign * activation_grad_mask(x)


class BatchNorm2d(Layer):
    def __init__(self, name, c, momentum=0.1, eps=1e-5):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(c)
        self.params["beta"] = np.zeros(c)
        self.buffers["running_mean"] = np.zeros(c)
        self.buffers["running_var"] = np.ones(c)

    def forward(self, x, training=True):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.size // x.shape[1]
            unbiased = var * m / max(m - 1, 1)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - self.momentum
            rm += self.momentum * mean
            rv *= 1 - self.momentum
            rv += self.momentum * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std)
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    def backward(self, grad):
        xhat, inv_std = self._cache
        gamma = self.params["gamma"]
        self.grads["gamma"] = (grad * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = grad.sum(axis=(0, 2, 3))
        m = grad.size // grad.shape[1]
        dxhat = grad * gamma[None, :, None, None]
        return (inv_std[None, :, None, None] / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])


class GlobalAvgPool(Layer):
    def forward(self, x, training=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Linear(Layer):
    def __init__(self, name, d_in, d_out):
        super().__init__(name)
        self.params["weight"] = np.zeros((d_out, d_in))
        self.params["bias"] = np.zeros(d_out)

    def forward(self, x, training=True):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] = grad.T @ self._x
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class ConvNetS:
    """Desk-scale binarized CNN.

    float conv(3->w0) + BN, then binarized blocks conv -> BN (+ identity
    skip when shapes match), global average pool, float linear head.  The
    sign of each block input is taken inside :class:`BinaryConv2d`.  First
    and last layers stay real-valued.
    """

    def __init__(self, in_channels=3, classes=10, widths=(16, 32, 64, 64), mode="siman"):
        self.in_channels, self.classes = in_channels, classes
        self.widths, self.mode = tuple(widths), mode
        self.stem = Conv2d("stem.conv", in_channels, widths[0], 3, 1, 1)
        self.stem_bn = BatchNorm2d("stem.bn", widths[0])
        self.blocks = []
        for i, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            stride = 2 if c_out != c_in else 1
            conv = BinaryConv2d(f"block{i}.conv", c_in, c_out, 3, stride, 1, mode)
            bn = BatchNorm2d(f"block{i}.bn", c_out)
            self.blocks.append((conv, bn, c_in == c_out and stride == 1))
        self.pool = GlobalAvgPool("pool")
        self.fc = Linear("fc", widths[-1], classes)

    @property
    def layers(self) -> list[Layer]:
        out = [self.stem, self.stem_bn]
        for conv, bn, _ in self.blocks:
            out += [conv, bn]
        return out + [self.fc]

    def binary_layers(self) -> list[BinaryConv2d]:
        return [conv for conv, _, _ in self.blocks]

    def init_weights(self, seed: int):
        """Kaiming fan-in normal for convs, 1/sqrt(fan_in) normal for the head."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if isinstance(layer, (Conv2d, BinaryConv2d)):
                w = layer.params["weight"]
                fan_in = w[0].size
                w[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w.shape)
            elif isinstance(layer, Linear):
                w = layer.params["weight"]
                w[...] = rng.normal(0.0, np.sqrt(1.0 / w.shape[1]), size=w.shape)
                layer.params["bias"][...] = 0.0
        return self

    def forward(self, x, training=True):
        h = self.stem_bn.forward(self.stem.forward(x, training), training)
        for conv, bn, skip in self.blocks:
            y = bn.forward(conv.forward(h, training), training)
            h = y + h if skip else y
        return self.fc.forward(self.pool.forward(h, training), training)

    def backward(self, grad):
        g = self.pool.backward(self.fc.backward(grad))
        for conv, bn, skip in reversed(self.blocks):
            gy = conv.backward(bn.backward(g))
            g = gy + g if skip else gy
        return self.stem.backward(self.stem_bn.backward(g))

    # flat views used by the optimizer and checkpoints
    def named_params(self):
        for layer in self.layers:
            for key, arr in layer.params.items():
                yield f"{layer.name}.{key}", arr, layer

    def named_buffers(self):
        for layer in self.layers:
            for key, arr in layer.buffers.items():
                yield f"{layer.name}.{key}", arr

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((k, a) for k, a, _ in self.named_params())
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state):
        own = self.state_dict()
        if set(own) != set(state):
            raise ShapeMismatch(f"state keys differ: {sorted(set(own) ^ set(state))}")
        for k, arr in own.items():
            src = np.asarray(state[k], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeMismatch(f"{k}: shape {src.shape} != {arr.shape}")
            arr[...] = src
        return self
