"""Layers with hand-written backward passes.

Image tensors inside the network are channels-last (``[b, h, w, c]``); the
model transposes its NCHW input once at the stem. Each layer keeps its
parameters in ``params`` and the matching gradients in ``grads`` (same keys).
"""
import numpy as np

from . import _kernels
from .errors import DataError, DimensionError, StateError
from .tensor import conv_output_size


def he_init(shape, fan_in, rng, dtype=np.float32):
    """Normal(0, sqrt(2 / fan_in)) weights drawn from ``rng``."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return rng.normal(shape, std=np.sqrt(2.0 / fan_in), dtype=dtype)


class Layer:
    """Base class: parameter/gradient dicts and a single-use forward cache."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a preceding forward")
        cache, self._cache = self._cache, None
        return cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2d(Layer):
    """Bias-free 2-D cross-correlation on channels-last tensors."""

    def __init__(self, cin, cout, k, rng, stride=1, pad=0, dtype=np.float32, input_grad=True):
        super().__init__()
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.pad = stride, pad
        self.input_grad = input_grad
        self._buffers = {}
        self.params["weight"] = he_init((cout, cin, k, k), cin * k * k, rng, dtype)
        self.zero_grad()

    def _wmat(self):
        w = self.params["weight"]
        return w.transpose(2, 3, 1, 0).reshape(self.k * self.k * self.cin, self.cout)

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[3] != self.cin:
            raise DimensionError(f"Conv2d expects [b,h,w,{self.cin}], got {x.shape}")
        b, h, w, _ = x.shape
        oh = conv_output_size(h, self.k, self.stride, self.pad, exact=False)
        ow = conv_output_size(w, self.k, self.stride, self.pad, exact=False)
        if self.pad:
            p = self.pad
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        shape = (b * oh * ow, self.k * self.k * self.cin)
        cols = self._workspace("cols", shape, x.dtype) if train else np.empty(shape, x.dtype)
        _kernels.im2col_nhwc(np.ascontiguousarray(x), self.k, self.k, self.stride, oh, ow, cols)
        out = cols @ self._wmat()
        self._cache = (cols, x.shape, oh, ow)
        return out.reshape(b, oh, ow, self.cout)

    def _workspace(self, key, shape, dtype):
        # reused across training steps; the forward cache holds the only live view
        buf = self._buffers.get(key)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = np.empty(shape, dtype)
            self._buffers[key] = buf
        return buf

    def backward(self, dout):
        cols, padded_shape, oh, ow = self._take_cache()
        d2 = dout.reshape(-1, self.cout)
        dw = cols.T @ d2
        self.grads["weight"] = np.ascontiguousarray(
            dw.reshape(self.k, self.k, self.cin, self.cout).transpose(3, 2, 0, 1))
        if not self.input_grad:
            return None
        dcols = d2 @ self._wmat().T
        dx = self._workspace("dx", padded_shape, dcols.dtype)
        _kernels.col2im_nhwc(dcols, self.k, self.k, self.stride, oh, ow, dx)
        hp, wp = padded_shape[1:3]
        if self.pad:
            p = self.pad
            dx = dx[:, p: hp - p, p: wp - p, :]
        return np.ascontiguousarray(dx)


class BatchNorm(Layer):
    """Batch normalization over every axis but the last (channel) one."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        c = x.shape[-1]
        if c != self.params["gamma"].shape[0]:
            raise DimensionError(f"BatchNorm over {self.params['gamma'].shape[0]} channels got {x.shape}")
        flat = x.reshape(-1, c)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            n = flat.shape[0]
            out, xhat, mean, var = _kernels.bn_forward(flat, gamma, beta, self.eps)
            inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = m * rm + (1 - m) * mean
            rv[...] = m * rv + (1 - m) * var * (n / max(n - 1, 1))
        else:
            inv = (1.0 / np.sqrt(self.buffers["running_var"] + self.eps)).astype(x.dtype)
            xhat = (flat - self.buffers["running_mean"]) * inv
            out = xhat * gamma + beta
        self._cache = (xhat, inv, train, x.shape)
        return out.reshape(x.shape)

    def backward(self, dout):
        xhat, inv, train, shape = self._take_cache()
        c = shape[-1]
        dy = dout.reshape(-1, c)
        if train:
            dx, self.grads["gamma"], self.grads["beta"] = _kernels.bn_backward(
                np.ascontiguousarray(dy), xhat, self.params["gamma"], inv)
            return dx.reshape(shape)
        self.grads["beta"] = dy.sum(axis=0)
        self.grads["gamma"] = (dy * xhat).sum(axis=0)
        return (dy * (self.params["gamma"] * inv)).reshape(shape)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self.last_input = None

    def forward(self, x, train=True):
        self.last_input = x
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class Linear(Layer):
    """``y = x @ W.T + b`` with W stored as [out, in]."""

    def __init__(self, fin, fout, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.params["weight"] = he_init((fout, fin), fin, rng, dtype)
        if bias:
            self.params["bias"] = np.zeros(fout, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        w = self.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise DimensionError(f"Linear expects [b,{w.shape[1]}], got {x.shape}")
        self._cache = x
        out = x @ w.T
        if "bias" in self.params:
            out = out + self.params["bias"]
        return out

    def backward(self, dout):
        x = self._take_cache()
        self.grads["weight"] = dout.T @ x
        if "bias" in self.params:
            self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"]


class GlobalAvgPool(Layer):
    """[b,h,w,c] -> [b,c] spatial mean."""

    def forward(self, x, train=True):
        if x.ndim != 4:
            raise DimensionError(f"GlobalAvgPool expects rank 4, got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        b, h, w, c = self._take_cache()
        g = dout / (h * w)
        return np.broadcast_to(g[:, None, None, :], (b, h, w, c)).astype(dout.dtype)


class PreActBlock(Layer):
    """BN -> ReLU -> conv3x3 -> BN -> ReLU -> conv3x3, plus shortcut.

    The shortcut is the identity when shape is preserved, otherwise a strided
    1x1 projection of the pre-activated input.
    """

    def __init__(self, cin, cout, rng, stride=1, dtype=np.float32, bn_momentum=0.9, bn_eps=1e-5):
        super().__init__()
        self.bn1 = BatchNorm(cin, bn_momentum, bn_eps, dtype)
        self.relu1 = ReLU()
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, pad=1, dtype=dtype)
        self.bn2 = BatchNorm(cout, bn_momentum, bn_eps, dtype)
        self.relu2 = ReLU()
        self.conv2 = Conv2d(cout, cout, 3, rng, stride=1, pad=1, dtype=dtype)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = Conv2d(cin, cout, 1, rng, stride=stride, pad=0, dtype=dtype)

    def children(self):
        out = [("bn1", self.bn1), ("conv1", self.conv1), ("bn2", self.bn2), ("conv2", self.conv2)]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        return out

    def relus(self):
        return [self.relu1, self.relu2]

    def forward(self, x, train=True):
        pre = self.relu1.forward(self.bn1.forward(x, train), train)
        h = self.conv1.forward(pre, train)
        h = self.conv2.forward(self.relu2.forward(self.bn2.forward(h, train), train), train)
        short = x if self.shortcut is None else self.shortcut.forward(pre, train)
        if short.shape != h.shape:
            raise DimensionError(f"shortcut {short.shape} vs residual {h.shape}")
        self._cache = True
        return short + h

    def backward(self, dout):
        self._take_cache()
        dh = self.conv2.backward(dout)
        dh = self.bn2.backward(self.relu2.backward(dh))
        dpre = self.conv1.backward(dh)
        if self.shortcut is None:
            dx_short = dout
        else:
            dpre = dpre + self.shortcut.backward(dout)
            dx_short = 0
        dx = self.bn1.backward(self.relu1.backward(dpre))
        return dx + dx_short


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    shifted = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    sums = expd.sum(axis=1)
    rows = np.arange(b)
    loss = float(np.mean(np.log(sums) - shifted[rows, labels]))
    probs = expd / sums[:, None]
    probs[rows, labels] -= 1.0
    return loss, (probs / b).astype(logits.dtype)
