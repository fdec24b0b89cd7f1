"""Dense tensor primitives.

Tensors are plain row-major ``numpy.ndarray`` values (float32 for training,
float64 for verification). The functions here validate shapes, accumulate in
float64 regardless of input precision, cast back to the input dtype, and refuse
to return non-finite values.
"""
import numpy as np

from . import _kernels
from .errors import DimensionError, NonFiniteError

FLOAT_DTYPES = (np.float32, np.float64)


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def tensor(data, dtype=np.float32):
    """Copy ``data`` into a contiguous tensor of ``dtype``."""
    out = np.array(data, dtype=dtype, order="C")
    return check_finite(out)


def _result_dtype(*arrays):
    return np.result_type(*[a.dtype for a in arrays], np.float32)


def _finish(x, dtype, what):
    return check_finite(np.ascontiguousarray(x, dtype=dtype), what)


class Rng:
    """Seeded PCG64 stream.

    ``Rng(seed, *keys)`` derives an independent stream for each key tuple, so
    e.g. ``Rng(seed, "shuffle", epoch)`` is reproducible without threading a
    single generator through the whole run.
    """

    def __init__(self, seed, *keys):
        entropy = [int(seed) & (2**64 - 1)]
        for k in keys:
            if isinstance(k, str):
                entropy.extend(k.encode("utf-8"))
            else:
                entropy.append(int(k))
        self.seed = int(seed)
        self.keys = keys
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def normal(self, shape, std=1.0, dtype=np.float32):
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape, low=0.0, high=1.0, dtype=np.float64):
        return self._gen.uniform(low, high, shape).astype(dtype)

    def integers(self, low, high, shape=None):
        """Integers in the half-open range [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def bernoulli(self, p, shape):
        return self._gen.random(shape) < p


# -- elementwise -----------------------------------------------------------

def _binary(a, b, fn, what):
    a = np.asarray(a)
    b = np.asarray(b)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{what}: cannot broadcast {a.shape} with {b.shape}") from exc
    dtype = _result_dtype(a, b)
    return _finish(fn(a.astype(np.float64), b.astype(np.float64)).reshape(shape), dtype, what)


def add(a, b):
    return _binary(a, b, np.add, "add")


def sub(a, b):
    return _binary(a, b, np.subtract, "sub")


def mul(a, b):
    return _binary(a, b, np.multiply, "mul")


def _unary(x, fn, what):
    x = np.asarray(x)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = fn(x.astype(np.float64))
    return _finish(out, _result_dtype(x), what)


def absolute(x):
    return _unary(x, np.abs, "abs")


def sign(x):
    return _unary(x, np.sign, "sign")


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), "relu")


def exp(x):
    return _unary(x, np.exp, "exp")


def log(x):
    return _unary(x, np.log, "log")


def scale_rows(x, s):
    """Multiply row ``r`` of a rank-2 tensor by the scalar ``s[r]``."""
    x = np.asarray(x)
    s = np.asarray(s)
    if x.ndim != 2 or s.reshape(-1).shape[0] != x.shape[0]:
        raise DimensionError(f"scale_rows: {x.shape} vs per-row {s.shape}")
    return mul(x, s.reshape(-1, 1))


def transpose(x, axes=None):
    x = np.asarray(x)
    if axes is not None and sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: bad axes {axes} for rank {x.ndim}")
    return np.ascontiguousarray(np.transpose(x, axes))


# -- structural ---------------------------------------------------------------

def pad2d(x, pad, value=0.0):
    """Pad the last two axes of a rank-4 tensor by ``pad`` on every side."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"pad2d expects rank 4, got {x.shape}")
    if pad < 0:
        raise DimensionError("pad must be non-negative")
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def crop2d(x, top, left, height, width):
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"crop2d expects rank 4, got {x.shape}")
    h, w = x.shape[2:]
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise DimensionError(f"crop window ({top},{left},{height},{width}) outside {h}x{w}")
    return np.ascontiguousarray(x[:, :, top: top + height, left: left + width])


# -- reductions and products ---------------------------------------------------

def reduce_sum(x, axis):
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {x.ndim}")
    return _finish(np.sum(x, axis=axis, dtype=np.float64), _result_dtype(x), "reduce_sum")


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return _finish(out, _result_dtype(a, b), "matmul")


def conv_output_size(size, k, stride, pad, exact=True):
    """Output extent of a convolution; ``exact=False`` floors like most frameworks."""
    span = size + 2 * pad - k
    if span < 0:
        raise DimensionError(f"kernel {k} larger than padded input {size + 2 * pad}")
    if exact and span % stride:
        raise DimensionError(
            f"non-integral output extent: ({size} + 2*{pad} - {k})/{stride} + 1")
    return span // stride + 1


def conv2d(x, kernel, stride=1, pad=0, method="direct"):
    """Cross-correlate ``x`` [b,c,h,w] with ``kernel`` [f,c,kh,kw].

    ``method="direct"`` runs the loop nest; ``method="im2col"`` lowers to one
    matrix product. Both accumulate in float64.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 operands, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"channel mismatch: input {x.shape[1]}, kernel {kernel.shape[1]}")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    f, c, kh, kw = kernel.shape
    oh = conv_output_size(x.shape[2], kh, stride, pad)
    ow = conv_output_size(x.shape[3], kw, stride, pad)
    dtype = _result_dtype(x, kernel)
    xp = pad2d(x, pad).astype(np.float64)
    if method == "direct":
        out = _kernels.conv2d_direct(np.ascontiguousarray(xp), kernel.astype(np.float64), stride, oh, ow)
    elif method == "im2col":
        xh = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        cols = np.empty((x.shape[0] * oh * ow, kh * kw * c))
        _kernels.im2col_nhwc(xh, kh, kw, stride, oh, ow, cols)
        wmat = kernel.astype(np.float64).transpose(2, 3, 1, 0).reshape(kh * kw * c, f)
        out = (cols @ wmat).reshape(x.shape[0], oh, ow, f).transpose(0, 3, 1, 2)
    else:
        raise ValueError(f"unknown conv2d method {method!r}")
    return _finish(out, dtype, "conv2d")
