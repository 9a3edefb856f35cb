"""Forward and backward passes for the layer primitives.

Tensors are C-contiguous ``float32`` numpy arrays. Convolutions are stride 1
cross-correlations lowered to a single matmul through im2col.
"""

from __future__ import annotations

import numpy as np

from . import kernels

DTYPE = np.float32
LOG_CLAMP = 1e-12


class EngineError(ValueError):
    """Shape mismatch or non-finite value inside the numeric engine."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise EngineError(f"non-finite values produced by {where}")
    return x


def _conv_pad(kh: int, kw: int, padding: str) -> int:
    if padding == "valid":
        return 0
    if padding == "same":
        if kh != kw or kh % 2 == 0:
            raise EngineError(f"'same' padding needs an odd square kernel, got {kh}x{kw}")
        return kh // 2
    raise EngineError(f"unknown padding {padding!r}; expected 'same' or 'valid'")


def _check_conv_shapes(x, weights, bias, pad):
    if x.ndim != 4:
        raise EngineError(f"conv2d input must be 4-D [N,Cin,H,W], got shape {x.shape}")
    if weights.ndim != 4:
        raise EngineError(f"conv2d weights must be 4-D [Cout,Cin,kh,kw], got shape {weights.shape}")
    cout, cin, kh, kw = weights.shape
    if x.shape[1] != cin:
        raise EngineError(f"conv2d channel mismatch: input has {x.shape[1]}, weights expect {cin}")
    if bias.shape != (cout,):
        raise EngineError(f"conv2d bias shape {bias.shape} != ({cout},)")
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise EngineError(f"kernel {kh}x{kw} does not fit input {x.shape[2]}x{x.shape[3]}")


def _weight_matrix(weights):
    # [Cout, Cin, kh, kw] -> [Cout, kh*kw*Cin], matching the NHWC patch layout
    cout = weights.shape[0]
    return np.ascontiguousarray(weights.transpose(0, 2, 3, 1)).reshape(cout, -1)


# Rows per GEMM call in eval mode. BLAS picks its kernel from the matrix shape,
# so a row's result depends on how many rows share the call; fixed, zero-padded
# blocks make eval outputs independent of the batch size.
EVAL_ROW_BLOCK = 256


def blocked_matmul(a, b, rows=EVAL_ROW_BLOCK):
    """``a @ b`` computed in fixed ``rows``-row blocks, the last one zero-padded."""
    m = a.shape[0]
    out = np.empty((m, b.shape[1]), dtype=DTYPE)
    buf = None
    for start in range(0, m, rows):
        part = a[start:start + rows]
        n = len(part)
        if n < rows:
            if buf is None:
                buf = np.zeros((rows, a.shape[1]), dtype=DTYPE)
            buf[:n] = part
            part = buf
        out[start:start + n] = (part @ b)[:n]
    return out


def conv2d(x, weights, bias, padding="same", deterministic=False):
    """Return ``(output, cols)``; ``cols`` is the patch matrix reused by backward.

    ``deterministic`` makes each sample's output independent of the batch it
    is computed in (used for every eval-mode forward).
    """
    x = as_tensor(x)
    cout, _, kh, kw = weights.shape
    pad = _conv_pad(kh, kw, padding)
    _check_conv_shapes(x, weights, bias, pad)
    n = x.shape[0]
    ho = x.shape[2] + 2 * pad - kh + 1
    wo = x.shape[3] + 2 * pad - kw + 1
    cols = kernels.im2col(np.ascontiguousarray(x.transpose(0, 2, 3, 1)), kh, kw, pad)
    wt = np.ascontiguousarray(_weight_matrix(weights).T)
    out = blocked_matmul(cols, wt) if deterministic else cols @ wt
    out += bias
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d_backward(grad, x_shape, cols, weights, padding="same"):
    """Return ``(dx, dweights, dbias)``."""
    cout, cin, kh, kw = weights.shape
    pad = _conv_pad(kh, kw, padding)
    n, _, h, w = x_shape
    g = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(-1, cout)
    dw = (g.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
    db = g.sum(axis=0, dtype=DTYPE)
    dcols = g @ _weight_matrix(weights)
    dx = kernels.col2im(dcols, n, h, w, cin, kh, kw, pad)
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), np.ascontiguousarray(dw), db


def maxpool2x2(x):
    """Return ``(output, argmax)`` where argmax is the window offset 0..3."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise EngineError(f"maxpool2x2 input must be 4-D, got shape {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise EngineError(f"maxpool2x2 needs even spatial dims, got {x.shape[2]}x{x.shape[3]}")
    return kernels.maxpool2x2_forward(x)


def maxpool2x2_backward(grad, argmax):
    return kernels.maxpool2x2_backward(as_tensor(grad), argmax)


def dense(x, weights, bias):
    x = as_tensor(x)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise EngineError(f"dense shape mismatch: input {x.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise EngineError(f"dense bias shape {bias.shape} != ({weights.shape[1]},)")
    return kernels.dense_forward(x, np.ascontiguousarray(weights), np.ascontiguousarray(bias))


def dense_backward(grad, x, weights):
    return grad @ weights.T, x.T @ grad, grad.sum(axis=0, dtype=DTYPE)


def relu(x):
    return np.maximum(x, DTYPE(0.0))


def relu_backward(grad, x):
    return grad * (x > 0)


def softmax(logits):
    """Row-wise softmax over the last axis; evaluated in float64, returned as float32."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(DTYPE)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer ``labels``; log argument clamped at 1e-12."""
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise EngineError(f"cross_entropy shape mismatch: probs {probs.shape}, labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise EngineError("label outside [0, K)")
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())


def softmax_cross_entropy_backward(probs, labels):
    """Gradient of mean cross-entropy w.r.t. the logits: ``(probs - onehot) / N``."""
    n = probs.shape[0]
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    return g / DTYPE(n)


def dropout(x, rate, rng=None, train=False):
    """Inverted dropout. Returns ``(output, mask)``; mask is ``None`` when inactive."""
    if not 0.0 <= rate < 1.0:
        raise EngineError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise EngineError("train-mode dropout needs an rng")
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep.astype(DTYPE) * DTYPE(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def sgd_step(params, grads, lr):
    """Plain SGD, in place: ``p -= lr * g``."""
    if lr < 0:
        raise EngineError(f"learning rate must be non-negative, got {lr}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise EngineError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if lr:
            p -= DTYPE(lr) * g
    return params
