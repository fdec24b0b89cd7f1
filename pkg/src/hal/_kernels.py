"""Hot inner loops, compiled with numba when available.

Set ``HAL_USE_NUMBA=0`` in the environment to force the pure-numpy path.
The conv-direct and aux kernels sum in the same order on both paths and agree
bit-for-bit; the batch-norm kernels may differ in the last ulp.

im2col/col2im write into caller-provided buffers so layers can reuse memory
across steps instead of faulting in fresh pages every batch.
"""
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("HAL_USE_NUMBA", "1") != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# pure-numpy implementations
# --------------------------------------------------------------------------

def _im2col_nhwc_np(xp, kh, kw, stride, oh, ow, out):
    b, _, _, c = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1: stride, : (ow - 1) * stride + 1: stride]
    # (b, oh, ow, c, kh, kw) -> (b, oh, ow, kh, kw, c)
    np.copyto(out.reshape(b, oh, ow, kh, kw, c), win.transpose(0, 1, 2, 4, 5, 3))


def _col2im_nhwc_np(cols, kh, kw, stride, oh, ow, dx):
    b, hp, wp, c = dx.shape
    cols = cols.reshape(b, oh, ow, kh, kw, c)
    dx[...] = 0
    for p in range(kh):
        for q in range(kw):
            dx[:, p: p + (oh - 1) * stride + 1: stride,
               q: q + (ow - 1) * stride + 1: stride, :] += cols[:, :, :, p, q, :]
    return dx


def _bn_forward_np(x, gamma, beta, eps):
    mean = x.mean(axis=0, dtype=np.float64)
    centered = x - mean
    var = np.mean(centered * centered, axis=0)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype)) * inv
    return xhat * gamma + beta, xhat, mean, var


def _bn_backward_np(dy, xhat, gamma, inv):
    n = dy.shape[0]
    dbeta = dy.sum(axis=0, dtype=np.float64)
    dgamma = (dy * xhat).sum(axis=0, dtype=np.float64)
    m1 = (gamma * dbeta / n).astype(dy.dtype)
    m2 = (gamma * dgamma / n).astype(dy.dtype)
    dx = (dy * gamma - m1 - xhat * m2) * inv
    return dx, dgamma.astype(dy.dtype), dbeta.astype(dy.dtype)


def _conv2d_direct_np(xp, w, stride, oh, ow):
    b = xp.shape[0]
    f, c, kh, kw = w.shape
    xp = xp.astype(np.float64)
    w = w.astype(np.float64)
    out = np.zeros((b, f, oh, ow))
    for ci in range(c):
        for p in range(kh):
            for q in range(kw):
                patch = xp[:, ci, p: p + (oh - 1) * stride + 1: stride,
                           q: q + (ow - 1) * stride + 1: stride]
                out += w[None, :, ci, p, q, None, None] * patch[:, None]
    return out


def _aux_forward_np(y, w, xstar):
    b, l = y.shape
    s = w.shape[1]
    z = np.zeros((b, s), dtype=y.dtype)
    for i in range(l):
        z += y[:, i: i + 1] * w[i][None, :]
    dev = z - xstar
    a = np.zeros(b, dtype=y.dtype)
    for j in range(s):
        a += np.abs(dev[:, j])
    return z, a, y * a[:, None]


def _aux_backward_np(grad_out, y, w, chi, a):
    b, l = y.shape
    s = w.shape[1]
    dlda = np.zeros(b, dtype=y.dtype)
    for i in range(l):
        dlda += grad_out[:, i] * y[:, i]
    g = chi * dlda[:, None]
    grad_y = grad_out * a[:, None]
    extra = np.zeros_like(grad_y)
    for j in range(s):
        extra += g[:, j: j + 1] * w[:, j][None, :]
    grad_y = grad_y + extra
    grad_w = np.zeros_like(w)
    for r in range(b):
        grad_w += g[r][None, :] * y[r][:, None]
    return grad_y, grad_w, dlda


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if USE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def _im2col_nhwc_nb(xp, kh, kw, stride, oh, ow, out):
        b, hp, wp, c = xp.shape
        row = kw * c
        src = xp.ravel()
        dst = out.ravel()
        img = hp * wp * c
        line = wp * c
        m = 0
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    s0 = n * img + j * stride * c
                    for p in range(kh):
                        s = s0 + (i * stride + p) * line
                        for t in range(row):
                            dst[m + t] = src[s + t]
                        m += row

    @njit
    def _col2im_nhwc_nb(cols, kh, kw, stride, oh, ow, dx):
        b, hp, wp, c = dx.shape
        row = kw * c
        src = cols.ravel()
        dst = dx.ravel()
        dst[:] = 0
        img = hp * wp * c
        line = wp * c
        m = 0
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    s0 = n * img + j * stride * c
                    for p in range(kh):
                        s = s0 + (i * stride + p) * line
                        for t in range(row):
                            dst[s + t] += src[m + t]
                        m += row

    @njit
    def _bn_forward_nb(x, gamma, beta, eps):
        n, c = x.shape
        acc = np.zeros(c)
        for r in range(n):
            for k in range(c):
                acc[k] += x[r, k]
        mean = acc / n
        acc[:] = 0
        for r in range(n):
            for k in range(c):
                d = x[r, k] - mean[k]
                acc[k] += d * d
        var = acc / n
        inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        mean_t = mean.astype(x.dtype)
        xhat = np.empty_like(x)
        out = np.empty_like(x)
        for r in range(n):
            for k in range(c):
                h = (x[r, k] - mean_t[k]) * inv[k]
                xhat[r, k] = h
                out[r, k] = h * gamma[k] + beta[k]
        return out, xhat, mean, var

    @njit
    def _bn_backward_nb(dy, xhat, gamma, inv):
        n, c = dy.shape
        dbeta = np.zeros(c)
        dgamma = np.zeros(c)
        for r in range(n):
            for k in range(c):
                dbeta[k] += dy[r, k]
                dgamma[k] += dy[r, k] * xhat[r, k]
        m1 = (gamma * dbeta / n).astype(dy.dtype)
        m2 = (gamma * dgamma / n).astype(dy.dtype)
        dx = np.empty_like(dy)
        for r in range(n):
            for k in range(c):
                dx[r, k] = (dy[r, k] * gamma[k] - m1[k] - xhat[r, k] * m2[k]) * inv[k]
        return dx, dgamma.astype(dy.dtype), dbeta.astype(dy.dtype)

    @njit
    def _conv2d_direct_nb(xp, w, stride, oh, ow):
        b = xp.shape[0]
        f, c, kh, kw = w.shape
        out = np.zeros((b, f, oh, ow))
        for n in range(b):
            for g in range(f):
                for i in range(oh):
                    for j in range(ow):
                        acc = 0.0
                        for ci in range(c):
                            for p in range(kh):
                                for q in range(kw):
                                    acc += np.float64(w[g, ci, p, q]) * np.float64(
                                        xp[n, ci, i * stride + p, j * stride + q])
                        out[n, g, i, j] = acc
        return out

    @njit
    def _aux_forward_nb(y, w, xstar):
        b, l = y.shape
        s = w.shape[1]
        z = np.zeros((b, s), dtype=y.dtype)
        a = np.zeros(b, dtype=y.dtype)
        out = np.empty_like(y)
        for r in range(b):
            for j in range(s):
                acc = z[r, j]
                for i in range(l):
                    acc += y[r, i] * w[i, j]
                z[r, j] = acc
            for j in range(s):
                a[r] += abs(z[r, j] - xstar[r, j])
            for i in range(l):
                out[r, i] = y[r, i] * a[r]
        return z, a, out

    @njit
    def _aux_backward_nb(grad_out, y, w, chi, a):
        b, l = y.shape
        s = w.shape[1]
        dlda = np.zeros(b, dtype=y.dtype)
        grad_y = np.empty_like(y)
        grad_w = np.zeros_like(w)
        for r in range(b):
            acc = dlda[r]
            for i in range(l):
                acc += grad_out[r, i] * y[r, i]
            dlda[r] = acc
        # accumulate through an array so float32 inputs round like the numpy path
        extra = np.zeros(l, dtype=y.dtype)
        for r in range(b):
            extra[:] = 0
            for j in range(s):
                g = chi[r, j] * dlda[r]
                for i in range(l):
                    extra[i] += g * w[i, j]
            for i in range(l):
                grad_y[r, i] = grad_out[r, i] * a[r] + extra[i]
        for r in range(b):
            for i in range(l):
                for j in range(s):
                    grad_w[i, j] += (chi[r, j] * dlda[r]) * y[r, i]
        return grad_y, grad_w, dlda

    im2col_nhwc = _im2col_nhwc_nb
    col2im_nhwc = _col2im_nhwc_nb
    bn_forward = _bn_forward_nb
    bn_backward = _bn_backward_nb
    conv2d_direct = _conv2d_direct_nb
    aux_forward = _aux_forward_nb
    aux_backward = _aux_backward_nb
else:
    im2col_nhwc = _im2col_nhwc_np
    col2im_nhwc = _col2im_nhwc_np
    bn_forward = _bn_forward_np
    bn_backward = _bn_backward_np
    conv2d_direct = _conv2d_direct_np
    aux_forward = _aux_forward_np
    aux_backward = _aux_backward_np

NUMPY_KERNELS = {
    "im2col_nhwc": _im2col_nhwc_np,
    "col2im_nhwc": _col2im_nhwc_np,
    "bn_forward": _bn_forward_np,
    "bn_backward": _bn_backward_np,
    "conv2d_direct": _conv2d_direct_np,
    "aux_forward": _aux_forward_np,
    "aux_backward": _aux_backward_np,
}
