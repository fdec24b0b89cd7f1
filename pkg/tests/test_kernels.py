"""Compiled kernels against their pure-numpy twins."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hal import _kernels as K
from hal.superclass import onehot_batch
from hal.tensor import Rng

NP = K.NUMPY_KERNELS
needs_numba = pytest.mark.skipif(not K.USE_NUMBA, reason="numba backend disabled")


def _im2col_case(seed, dtype=np.float32):
    r = Rng(seed, "im2col")
    b, c = int(r.integers(1, 4)), int(r.integers(1, 5))
    k = int(r.integers(1, 4))
    stride = int(r.integers(1, 3))
    h = int(r.integers(k, 9))
    oh = (h - k) // stride + 1
    x = r.normal((b, h, h, c), dtype=dtype)
    return x, k, stride, oh


class TestBackendSelection:
    def test_env_flag_forces_numpy(self):
        code = "from hal import _kernels as K; print(K.BACKEND, K.im2col_nhwc is K._im2col_nhwc_np)"
        env = dict(os.environ, HAL_USE_NUMBA="0")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.split() == ["numpy", "True"]

    @needs_numba
    def test_default_is_numba(self):
        assert K.BACKEND == "numba"
        assert K.aux_forward is not NP["aux_forward"]


@needs_numba
class TestAgreement:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_im2col_exact(self, seed):
        x, k, stride, oh = _im2col_case(seed)
        shape = (x.shape[0] * oh * oh, k * k * x.shape[3])
        a, b = np.empty(shape, x.dtype), np.empty(shape, x.dtype)
        K.im2col_nhwc(x, k, k, stride, oh, oh, a)
        NP["im2col_nhwc"](x, k, k, stride, oh, oh, b)
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_col2im_exact(self, seed):
        x, k, stride, oh = _im2col_case(seed, np.float64)
        cols = Rng(seed, "cols").normal((x.shape[0] * oh * oh, k * k * x.shape[3]), dtype=np.float64)
        a, b = np.full_like(x, 7.0), np.full_like(x, -3.0)
        K.col2im_nhwc(cols, k, k, stride, oh, oh, a)
        NP["col2im_nhwc"](cols, k, k, stride, oh, oh, b)
        # stride >= k means no overlap, so accumulation order cannot matter
        if stride >= k:
            np.testing.assert_array_equal(a, b)
        else:
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)

    def test_col2im_is_im2col_adjoint(self, rng):
        x = rng.normal((2, 6, 6, 3), dtype=np.float64)
        cols = np.empty((2 * 2 * 2, 27))
        K.im2col_nhwc(x, 3, 3, 2, 2, 2, cols)
        c = rng.normal(cols.shape, dtype=np.float64)
        dx = np.empty_like(x)
        K.col2im_nhwc(c, 3, 3, 2, 2, 2, dx)
        assert np.sum(cols * c) == pytest.approx(np.sum(x * dx), rel=1e-12)

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_batchnorm_close(self, rng, dtype):
        x = rng.normal((300, 7), dtype=dtype) * 4 + 1
        gamma = rng.normal(7, dtype=dtype)
        beta = rng.normal(7, dtype=dtype)
        fa = K.bn_forward(x, gamma, beta, 1e-5)
        fb = NP["bn_forward"](x, gamma, beta, 1e-5)
        tol = 1e-5 if dtype == np.float32 else 1e-12
        for u, v in zip(fa, fb):
            np.testing.assert_allclose(u, v, rtol=tol, atol=tol)
        dy = rng.normal(x.shape, dtype=dtype)
        inv = (1.0 / np.sqrt(fa[3] + 1e-5)).astype(dtype)
        for u, v in zip(K.bn_backward(dy, fa[1], gamma, inv), NP["bn_backward"](dy, fa[1], gamma, inv)):
            np.testing.assert_allclose(u, v, rtol=tol, atol=tol)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), stride=st.sampled_from([1, 2]))
    def test_conv_direct_exact(self, seed, stride):
        r = Rng(seed)
        xp = r.normal((2, 3, 7, 7), dtype=np.float64)
        w = r.normal((4, 3, 3, 3), dtype=np.float64)
        oh = (7 - 3) // stride + 1
        np.testing.assert_array_equal(K.conv2d_direct(xp, w, stride, oh, oh),
                                      NP["conv2d_direct"](xp, w, stride, oh, oh))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), dtype=st.sampled_from([np.float32, np.float64]))
    def test_aux_exact(self, seed, dtype):
        r = Rng(seed, "aux-kernel")
        b, l, s = int(r.integers(1, 20)), int(r.integers(1, 70)), int(r.integers(1, 6))
        y = r.normal((b, l), dtype=dtype)
        w = r.normal((l, s), dtype=dtype)
        xs = onehot_batch(r.integers(0, s, b), s, dtype=dtype)
        fa = K.aux_forward(y, w, xs)
        fb = NP["aux_forward"](y, w, xs)
        for u, v in zip(fa, fb):
            np.testing.assert_array_equal(u, v)
        chi = np.where(fa[0] > xs, 1, -1).astype(dtype)
        g = r.normal((b, l), dtype=dtype)
        for u, v in zip(K.aux_backward(g, y, w, chi, fa[1]), NP["aux_backward"](g, y, w, chi, fa[1])):
            np.testing.assert_array_equal(u, v)
