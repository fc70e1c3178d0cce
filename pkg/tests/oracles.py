"""Slow, independent reference computations used only by the tests."""
import itertools
import math

import numpy as np
from scipy import integrate


def enumerate_best_code(w):
    """Best {0,1} code by plain itertools enumeration, ties -> fewer ones."""
    mag = [abs(float(v)) for v in w]
    norm = math.sqrt(sum(m * m for m in mag))
    best = None
    for bits in itertools.product((0, 1), repeat=len(mag)):
        k = sum(bits)
        if k == 0:
            continue
        val = sum(b * m for b, m in zip(bits, mag)) / (math.sqrt(k) * norm)
        if best is None or val > best[0] or (val == best[0] and k < best[1]):
            best = (val, k, bits)
    return best


def erfc_quad(x):
    """erfc by adaptive quadrature of the Gaussian tail."""
    val, _ = integrate.quad(lambda t: math.exp(-t * t), x, math.inf, epsabs=1e-14, epsrel=1e-13)
    return 2.0 / math.sqrt(math.pi) * val


def conv2d_loops(x, w, stride, padding, pad_value):
    """Direct-summation convolution (cross-correlation) on (N,C,H,W) input."""
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                 constant_values=pad_value)
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


def fit_softmax_regression(x, y, classes, epochs=200, lr=0.5, seed=0):
    """Plain float multinomial logistic regression by full-batch descent."""
    x = x.reshape(x.shape[0], -1)
    mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-12
    xs = (x - mu) / sd
    rng = np.random.default_rng(seed)
    W = rng.normal(0, 0.01, size=(xs.shape[1], classes))
    b = np.zeros(classes)
    onehot = np.eye(classes)[y]
    for _ in range(epochs):
        z = xs @ W + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(y)
        W -= lr * xs.T @ g
        b -= lr * g.sum(axis=0)

    def predict(xt):
        xt = (xt.reshape(xt.shape[0], -1) - mu) / sd
        return (xt @ W + b).argmax(axis=1)

    return predict


def numeric_grad(f, arr, eps=1e-3):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr``."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g
