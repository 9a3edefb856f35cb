"""Pure-numpy reference kernels.

Used when the compiled ``_kernels`` extension is unavailable (or when
``ONN_PURE_PYTHON=1``). Both backends must produce bit-identical results, so
the accumulation order in :func:`col2im` mirrors the compiled loop nest.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, pad):
    """``x`` is NHWC; returns ``[N*Ho*Wo, kh*kw*C]`` with column ``(i*kw + j)*C + ch``."""
    n, h, w, c = x.shape
    ho = h + 2 * pad - kh + 1
    wo = w + 2 * pad - kw + 1
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N,Ho,Wo,C,kh,kw
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    return np.ascontiguousarray(cols, dtype=np.float32)


def col2im(cols, n, h, w, c, kh, kw, pad):
    ho = h + 2 * pad - kh + 1
    wo = w + 2 * pad - kw + 1
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=np.float32)
    # descending kernel offsets: same per-pixel summation order as the compiled loop
    for i in reversed(range(kh)):
        for j in reversed(range(kw)):
            out[:, i:i + ho, j:j + wo] += cols[:, :, :, i, j]
    if pad:
        out = out[:, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out, dtype=np.float32), idx


def maxpool2x2_backward(grad, idx):
    n, c, ho, wo = grad.shape
    onehot = idx[..., None] == np.arange(4, dtype=np.uint8)
    win = np.where(onehot, grad[..., None], np.float32(0.0))  # N,C,Ho,Wo,4
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win.reshape(n, c, ho * 2, wo * 2), dtype=np.float32)


def dense_forward(x, w, b):
    # same k-ascending multiply-then-add sequence as the compiled kernel
    out = np.zeros((x.shape[0], w.shape[1]), dtype=np.float32)
    for p in range(x.shape[1]):
        out += x[:, p:p + 1] * w[p]
    out += b
    return out
