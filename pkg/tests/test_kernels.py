"""The compiled kernels and the numpy fallback must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

from onn.engine import _kernels_py as py
from onn.engine import kernels

compiled = pytest.importorskip("onn.engine._kernels", reason="compiled extension not built")

SHAPES = [(1, 1, 5, 5), (3, 4, 8, 6), (2, 16, 32, 32)]


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("pad", [0, 1])
def test_im2col_col2im_bit_identical(shape, pad):
    rng = np.random.default_rng(sum(shape) + pad)
    n, c, h, w = shape
    x = rng.standard_normal((n, h, w, c)).astype(np.float32)
    a, b = compiled.im2col(x, 3, 3, pad), py.im2col(x, 3, 3, pad)
    assert np.array_equal(a, b)
    g = rng.standard_normal(a.shape).astype(np.float32)
    assert np.array_equal(compiled.col2im(g, n, h, w, c, 3, 3, pad), py.col2im(g, n, h, w, c, 3, 3, pad))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 6, 5, 3)).astype(np.float32)
    cols = py.im2col(x, 3, 3, 1)
    g = rng.standard_normal(cols.shape).astype(np.float32)
    lhs = np.sum(cols.astype(np.float64) * g)
    rhs = np.sum(x.astype(np.float64) * py.col2im(g, 2, 6, 5, 3, 3, 3, 1))
    assert lhs == pytest.approx(rhs, rel=1e-6)  # col2im accumulates in float32


@pytest.mark.parametrize("shape", SHAPES)
def test_maxpool_bit_identical(shape):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(shape[:2] + (shape[2] // 2 * 2, shape[3] // 2 * 2)).astype(np.float32)
    x[..., 0, 0] = x[..., 0, 1]  # ties resolve to the first element in both
    oa, ia = compiled.maxpool2x2_forward(x)
    ob, ib = py.maxpool2x2_forward(x)
    assert np.array_equal(oa, ob) and np.array_equal(ia, ib)
    g = rng.standard_normal(oa.shape).astype(np.float32)
    assert np.array_equal(compiled.maxpool2x2_backward(g, ia), py.maxpool2x2_backward(g, ib))


def test_dense_forward_bit_identical():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((9, 70)).astype(np.float32)
    w = rng.standard_normal((70, 13)).astype(np.float32)
    b = rng.standard_normal(13).astype(np.float32)
    assert np.array_equal(compiled.dense_forward(x, w, b), py.dense_forward(x, w, b))


def test_env_var_forces_python_backend():
    code = "from onn.engine import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, ONN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("compiled", "python")
