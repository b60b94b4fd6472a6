"""Layers with explicit forward/backward passes.

Tensors are channels-last: images are (N, H, W, C), token sets (N, n, d),
dense inputs (N, d). Each layer caches what its backward pass needs during
``forward``; ``backward`` takes the upstream gradient, fills ``grads`` for
its parameters and returns the gradient w.r.t. its input. Arrays keep the
dtype they are given (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        self.zero_grad()
        return self


def fan_in_uniform(rng, shape, fan_in, gain=math.sqrt(6.0), dtype=np.float32):
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv2d_forward(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlate (N, H, W, Cin) with a (k, k, Cin, Cout) kernel.

    Returns ``(out, cols)`` where ``cols`` is the (N*Ho*Wo, k*k*Cin) patch
    matrix; the output is ``cols @ kernel.reshape(-1, Cout)``.
    """
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"incompatible shapes: input {x.shape}, kernel {kernel.shape}")
    k, _, cin, cout = kernel.shape
    n, h, w, c = x.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    hp, wp = x.shape[1], x.shape[2]
    if hp < k or wp < k or stride < 1:
        raise ValueError(f"kernel {k}x{k} does not fit padded input {hp}x{wp}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    # windows: (N, Ho', Wo', C, k, k) -> (N, Ho, Wo, k, k, C)
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * cin)
    out = cols @ kernel.reshape(k * k * cin, cout)
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, cout), cols


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k=3, stride=1, padding=None, rng=None, gain=math.sqrt(6.0)):
        super().__init__()
        self.k, self.stride = k, stride
        self.padding = k // 2 if padding is None else padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = fan_in_uniform(rng, (k, k, c_in, c_out), k * k * c_in, gain)
        self.params["b"] = np.zeros(c_out, dtype=np.float32)
        self.zero_grad()

    def forward(self, x, train=True):
        out, cols = conv2d_forward(x, self.params["w"], self.params["b"], self.stride, self.padding)
        self._cache = (x.shape, cols) if train else None
        return out

    def backward(self, dout):
        x_shape, cols = self._cache
        k, s, p = self.k, self.stride, self.padding
        w = self.params["w"]
        cin, cout = w.shape[2], w.shape[3]
        n, ho, wo, _ = dout.shape
        d2 = dout.reshape(-1, cout)
        self.grads["w"] += (cols.T @ d2).reshape(w.shape)
        self.grads["b"] += d2.sum(axis=0)
        dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, k, k, cin)
        h, wd = x_shape[1] + 2 * p, x_shape[2] + 2 * p
        dx = np.zeros((n, h, wd, cin), dtype=dout.dtype)
        for a in range(k):
            for b in range(k):
                dx[:, a : a + s * ho : s, b : b + s * wo : s, :] += dcols[:, :, :, a, b, :]
        if p:
            dx = dx[:, p:-p, p:-p, :]
        return dx


class ReLU(Layer):
    def forward(self, x, train=True):
        mask = x > 0
        self._cache = mask if train else None
        return x * mask

    def backward(self, dout):
        return dout * self._cache


class Sigmoid(Layer):
    def forward(self, x, train=True):
        y = sigmoid(x)
        self._cache = y if train else None
        return y

    def backward(self, dout):
        y = self._cache
        return dout * y * (1 - y)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class MaxPool2(Layer):
    """2x2 max pooling, stride 2. Ties route the gradient to the first maximum."""

    def forward(self, x, train=True):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"max-pool needs even spatial dims, got {h}x{w}")
        win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg) if train else None
        return out

    def backward(self, dout):
        (n, h, w, c), arg = self._cache
        dwin = np.zeros((*dout.shape, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        return dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


def bilinear_matrix(n_in, factor, dtype=np.float64):
    """(n_in*factor, n_in) interpolation matrix, half-pixel centres, edge clamped."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    np.add.at(m, (np.arange(n_out), i0), 1 - f)
    np.add.at(m, (np.arange(n_out), i1), f)
    return m


class BilinearUpsample(Layer):
    """Separable bilinear upsampling by an integer factor; linear, so backward is the transpose."""

    def __init__(self, factor):
        super().__init__()
        self.factor = factor
        self._mats = {}

    def _mat(self, n, dtype):
        key = (n, np.dtype(dtype).str)
        if key not in self._mats:
            self._mats[key] = bilinear_matrix(n, self.factor, dtype)
        return self._mats[key]

    def forward(self, x, train=True):
        n, h, w, c = x.shape
        ah, aw = self._mat(h, x.dtype), self._mat(w, x.dtype)
        self._cache = (h, w) if train else None
        t = np.matmul(ah, x.reshape(n, h, w * c)).reshape(n, h * self.factor, w, c)
        return np.matmul(aw, t.transpose(0, 2, 1, 3).reshape(n, w, -1)).reshape(n, w * self.factor, h * self.factor, c).transpose(0, 2, 1, 3)

    def backward(self, dout):
        h, w = self._cache
        n, H, W, c = dout.shape
        ah, aw = self._mat(h, dout.dtype), self._mat(w, dout.dtype)
        t = np.matmul(aw.T, dout.transpose(0, 2, 1, 3).reshape(n, W, H * c)).reshape(n, w, H, c).transpose(0, 2, 1, 3)
        return np.matmul(ah.T, t.reshape(n, H, w * c)).reshape(n, h, w, c)


def softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def attention_forward(x, wq, wk, wv):
    """softmax(Q K^T / sqrt(d_k)) V with Q = X Wq, K = X Wk, V = X Wv.

    ``x`` is (n, d) or batched (N, n, d).
    """
    d = x.shape[-1]
    if wq.shape[0] != d or wk.shape[0] != d or wv.shape[0] != d:
        raise ValueError(f"weights must have {d} rows: {wq.shape}, {wk.shape}, {wv.shape}")
    if wq.shape[1] != wk.shape[1]:
        raise ValueError(f"query and key widths differ: {wq.shape[1]} vs {wk.shape[1]}")
    q, k, v = x @ wq, x @ wk, x @ wv
    p = softmax(q @ np.swapaxes(k, -1, -2) / math.sqrt(wk.shape[1]))
    return p @ v, (q, k, v, p)


class Attention(Layer):
    """Single-head self-attention over tokens, (N, n, d) -> (N, n, d_v)."""

    def __init__(self, d, d_k=None, d_v=None, rng=None):
        super().__init__()
        d_k = d_k or d
        d_v = d_v or d
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["wq"] = fan_in_uniform(rng, (d, d_k), d, 1.0)
        self.params["wk"] = fan_in_uniform(rng, (d, d_k), d, 1.0)
        self.params["wv"] = fan_in_uniform(rng, (d, d_v), d, 1.0)
        self.zero_grad()

    def forward(self, x, train=True):
        out, (q, k, v, p) = attention_forward(x, self.params["wq"], self.params["wk"], self.params["wv"])
        self._cache = (x, q, k, v, p) if train else None
        return out

    def backward(self, dout):
        x, q, k, v, p = self._cache
        scale = 1.0 / math.sqrt(k.shape[-1])
        xt = np.swapaxes(x, -1, -2)
        dv = np.swapaxes(p, -1, -2) @ dout
        dp = dout @ np.swapaxes(v, -1, -2)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dq = ds @ k * scale
        dk = np.swapaxes(ds, -1, -2) @ q * scale
        for name, g in (("wq", dq), ("wk", dk), ("wv", dv)):
            self.grads[name] += (xt @ g).reshape(-1, *self.params[name].shape).sum(axis=0)
        return dq @ self.params["wq"].T + dk @ self.params["wk"].T + dv @ self.params["wv"].T


class SpatialAttention(Layer):
    """Residual attention over the pixels of a feature map: x + Attention(tokens)."""

    def __init__(self, channels, rng=None):
        super().__init__()
        self.attn = Attention(channels, rng=rng)
        self.params = self.attn.params
        self.grads = self.attn.grads

    def zero_grad(self):
        self.attn.zero_grad()
        self.grads = self.attn.grads

    def astype(self, dtype):
        self.attn.astype(dtype)
        self.params, self.grads = self.attn.params, self.attn.grads
        return self

    def forward(self, x, train=True):
        n, h, w, c = x.shape
        tokens = x.reshape(n, h * w, c)
        return x + self.attn.forward(tokens, train).reshape(n, h, w, c)

    def backward(self, dout):
        n, h, w, c = dout.shape
        return dout + self.attn.backward(dout.reshape(n, h * w, c)).reshape(n, h, w, c)


class Dense(Layer):
    def __init__(self, d_in, d_out, rng=None, gain=math.sqrt(6.0)):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = fan_in_uniform(rng, (d_in, d_out), d_in, gain)
        self.params["b"] = np.zeros(d_out, dtype=np.float32)
        self.zero_grad()

    def forward(self, x, train=True):
        self._cache = x if train else None
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["w"] += x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["w"].T
