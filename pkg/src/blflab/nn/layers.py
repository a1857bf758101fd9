"""Differentiable layers with explicit forward caches.

Layers do not retain activations: forward returns (output, cache) and
backward consumes that cache, so forward/backward on a frozen model are
read-only and safe to run concurrently over disjoint batches.  Parameter
arrays live on the layer and are mutated only by the optimizer.
"""

from __future__ import annotations

import numpy as np


class Layer:
    params: tuple = ()

    def forward(self, x: np.ndarray, train: bool = False, rng=None):
        return x, None

    def backward(self, dy: np.ndarray, cache):
        """Returns (input gradient, gradients for self.params in order)."""
        return dy, []

    def spec(self) -> dict:
        return {"kind": type(self).__name__}


class Dense(Layer):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator | None = None):
        self.fan_in = fan_in
        self.fan_out = fan_out
        bound = 1.0 / np.sqrt(fan_in)
        rng = rng or np.random.default_rng(0)
        self.weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.bias = np.zeros(fan_out)
        self.params = (self.weight, self.bias)

    def forward(self, x, train=False, rng=None):
        return x @ self.weight + self.bias, x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.weight.T, [x.T @ dy, dy.sum(axis=0)]

    def spec(self):
        return {"kind": "Dense", "fan_in": self.fan_in, "fan_out": self.fan_out}


def _im2col(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, out_h, out_w))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride]
    return cols.reshape(n, c * kh * kw, out_h * out_w), out_h, out_w


def _col2im(dcols, x_shape, kh, kw, stride, padding):
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    dcols = dcols.reshape(n, c, kh, kw, out_h, out_w)
    dx = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += dcols[:, :, i, j]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


class Conv2D(Layer):
    """2-D convolution (cross-correlation) lowered to matrix products."""

    def __init__(self, cin, cout, kh, kw, stride=1, padding=0, rng=None):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.cin, self.cout, self.kh, self.kw = cin, cout, kh, kw
        self.stride, self.padding = stride, padding
        fan_in = cin * kh * kw
        bound = 1.0 / np.sqrt(fan_in)
        rng = rng or np.random.default_rng(0)
        self.weight = rng.uniform(-bound, bound, size=(cout, cin, kh, kw))
        self.bias = np.zeros(cout)
        self.params = (self.weight, self.bias)

    def forward(self, x, train=False, rng=None):
        cols, out_h, out_w = _im2col(x, self.kh, self.kw, self.stride, self.padding)
        wmat = self.weight.reshape(self.cout, -1)
        y = np.einsum("ol,nlk->nok", wmat, cols) + self.bias[None, :, None]
        return y.reshape(x.shape[0], self.cout, out_h, out_w), (cols, x.shape)

    def backward(self, dy, cache):
        cols, x_shape = cache
        n = dy.shape[0]
        dy_mat = dy.reshape(n, self.cout, -1)
        wmat = self.weight.reshape(self.cout, -1)
        dw = np.einsum("nok,nlk->ol", dy_mat, cols).reshape(self.weight.shape)
        db = dy_mat.sum(axis=(0, 2))
        dcols = np.einsum("ol,nok->nlk", wmat, dy_mat)
        dx = _col2im(dcols, x_shape, self.kh, self.kw, self.stride, self.padding)
        return dx, [dw, db]

    def spec(self):
        return {
            "kind": "Conv2D",
            "cin": self.cin,
            "cout": self.cout,
            "kh": self.kh,
            "kw": self.kw,
            "stride": self.stride,
            "padding": self.padding,
        }


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, []


class MaxPool2D(Layer):
    """Max pooling; ties route gradient to the first maximal position."""

    def __init__(self, k: int, stride: int | None = None):
        self.k = k
        self.stride = stride if stride is not None else k

    def forward(self, x, train=False, rng=None):
        cols, out_h, out_w = _im2col(
            x.reshape(-1, 1, x.shape[2], x.shape[3]), self.k, self.k, self.stride, 0
        )
        # cols: (n*c, k*k, out_h*out_w)
        arg = cols.argmax(axis=1)
        y = np.take_along_axis(cols, arg[:, None, :], axis=1)[:, 0, :]
        n, c = x.shape[0], x.shape[1]
        return y.reshape(n, c, out_h, out_w), (arg, x.shape, out_h, out_w)

    def backward(self, dy, cache):
        arg, x_shape, out_h, out_w = cache
        n, c, h, w = x_shape
        dcols = np.zeros((n * c, self.k * self.k, out_h * out_w))
        np.put_along_axis(dcols, arg[:, None, :], dy.reshape(n * c, 1, -1), axis=1)
        dx = _col2im(dcols, (n * c, 1, h, w), self.k, self.k, self.stride, 0)
        return dx.reshape(x_shape), []

    def spec(self):
        return {"kind": "MaxPool2D", "k": self.k, "stride": self.stride}


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []


class Dropout(Layer):
    """Inverted dropout: scaling happens at train time, eval is a no-op."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, []
        return dy * cache, []

    def spec(self):
        return {"kind": "Dropout", "rate": self.rate}
