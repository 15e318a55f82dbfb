"""Minimal numpy layers with explicit backward passes.

Activations are ``(batch, channels, time, freq)``. Every layer caches what
its backward pass needs during ``forward`` and accumulates parameter
gradients into ``grads`` (same keys as ``params``) during ``backward``.
Frequency is the last axis; pooling, upsampling and dilation act on it only.
"""

import math

import numpy as np


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a recorded forward pass")
        return self._cache


class Conv2d(Layer):
    """2-D convolution, 'same' zero padding, dilation along frequency only."""

    def __init__(self, c_in, c_out, kernel=(3, 3), dilation=1, rng=None, dtype=np.float32):
        super().__init__()
        kt, kf = kernel
        if kt % 2 == 0 or kf % 2 == 0:
            raise ValueError("kernel sizes must be odd for 'same' padding")
        self.kernel = (kt, kf)
        self.dilation = int(dilation)
        fan_in = c_in * kt * kf
        limit = math.sqrt(6.0 / fan_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = rng.uniform(-limit, limit, (c_out, c_in, kt, kf)).astype(dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def _pads(self):
        kt, kf = self.kernel
        return kt // 2, (kf // 2) * self.dilation

    def _im2col(self, x):
        n, c, t, f = x.shape
        kt, kf = self.kernel
        pt, pf = self._pads()
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (pf, pf)))
        cols = np.empty((n, c, kt, kf, t, f), dtype=x.dtype)
        for i in range(kt):
            for j in range(kf):
                j0 = j * self.dilation
                cols[:, :, i, j] = xp[:, :, i : i + t, j0 : j0 + f]
        return cols.reshape(n, c * kt * kf, t * f)

    def forward(self, x, train=False, rng=None):
        n, _, t, f = x.shape
        w = self.params["weight"]
        cols = self._im2col(x)
        out = np.matmul(w.reshape(w.shape[0], -1), cols)
        out += self.params["bias"][None, :, None]
        self._cache = (x.shape, cols)
        return out.reshape(n, w.shape[0], t, f)

    def backward(self, dout):
        shape, cols = self._cached()
        n, c, t, f = shape
        w = self.params["weight"]
        c_out = w.shape[0]
        kt, kf = self.kernel
        d2 = dout.reshape(n, c_out, t * f)
        self.grads["weight"] += np.tensordot(d2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        self.grads["bias"] += d2.sum(axis=(0, 2))
        dcols = np.matmul(w.reshape(c_out, -1).T, d2).reshape(n, c, kt, kf, t, f)
        pt, pf = self._pads()
        dxp = np.zeros((n, c, t + 2 * pt, f + 2 * pf), dtype=dout.dtype)
        for i in range(kt):
            for j in range(kf):
                j0 = j * self.dilation
                dxp[:, :, i : i + t, j0 : j0 + f] += dcols[:, :, i, j]
        return dxp[:, :, pt : pt + t, pf : pf + f]


class BatchNorm(Layer):
    """Per-channel batch normalization over (batch, time, freq)."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = (m * rm + (1 - m) * mean).astype(rm.dtype)
            self.buffers["running_var"] = (m * rv + (1 - m) * var).astype(rv.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, train)
        return (g * xhat + b).astype(x.dtype, copy=False)

    def backward(self, dout):
        xhat, inv_std, train = self._cached()
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][None, :, None, None]
        scale = inv_std[None, :, None, None]
        if not train:
            return dxhat * scale
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return scale / m * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._cached(), dout, 0).astype(dout.dtype, copy=False)


class Sigmoid(Layer):
    def forward(self, x, train=False, rng=None):
        # split by sign so large |x| never overflows exp
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        # keep the mask strictly inside (0, 1) even where the dtype saturates
        info = np.finfo(y.dtype)
        y = np.clip(y, info.tiny, 1.0 - info.epsneg)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._cached()
        return dout * y * (1 - y)


class MaxPoolFreq(Layer):
    """Non-overlapping max-pooling along frequency; ties go to the lowest index."""

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def forward(self, x, train=False, rng=None):
        n, c, t, f = x.shape
        if f % self.size:
            raise ValueError(f"frequency size {f} not divisible by pool size {self.size}")
        win = x.reshape(n, c, t, f // self.size, self.size)
        idx = np.argmax(win, axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, idx = self._cached()
        n, c, t, f = shape
        dx = np.zeros((n, c, t, f // self.size, self.size), dtype=dout.dtype)
        np.put_along_axis(dx, idx[..., None], dout[..., None], axis=-1)
        return dx.reshape(shape)


class UpConvFreq(Layer):
    """Transposed convolution with kernel = stride along frequency, 1 along time."""

    def __init__(self, c_in, c_out, factor=2, rng=None, dtype=np.float32):
        super().__init__()
        self.factor = factor
        limit = math.sqrt(6.0 / c_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = rng.uniform(-limit, limit, (c_in, c_out, factor)).astype(dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        n, _, t, f = x.shape
        w = self.params["weight"]
        out = np.tensordot(x, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4)
        out = out.reshape(n, w.shape[1], t, f * self.factor)
        self._cache = x
        return out + self.params["bias"][None, :, None, None]

    def backward(self, dout):
        x = self._cached()
        n, _, t, f = x.shape
        w = self.params["weight"]
        d5 = dout.reshape(n, w.shape[1], t, f, self.factor)
        self.grads["weight"] += np.tensordot(x, d5, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["bias"] += dout.sum(axis=(0, 2, 3))
        return np.tensordot(d5, w, axes=([1, 4], [1, 2])).transpose(0, 3, 1, 2)


class SpatialDropout(Layer):
    """Drops whole feature maps with probability ``rate`` during training."""

    def __init__(self, rate):
        super().__init__()
        self.rate = float(rate)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        keep = rng.random((x.shape[0], x.shape[1], 1, 1)) >= self.rate
        scale = (keep / (1.0 - self.rate)).astype(x.dtype)
        self._cache = scale
        return x * scale

    def backward(self, dout):
        # identity when forward ran in inference mode
        return dout if self._cache is None else dout * self._cache


def concat_channels(a, b):
    return np.concatenate([a, b], axis=1)


def split_channels(dout, n_first):
    return dout[:, :n_first], dout[:, n_first:]
