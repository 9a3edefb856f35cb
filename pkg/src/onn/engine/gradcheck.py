"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2x2, ReLU, Sequential
from .ops import DTYPE, cross_entropy, softmax, softmax_cross_entropy_backward


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        lines = [f"{k}: {v:.3e}" for k, v in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"max {self.max_error:.3e} (tol {self.tolerance:g}) {status}")
        return "\n".join(lines)


def relative_error(a, n):
    return np.abs(a - n) / (np.abs(a) + np.abs(n) + 1e-8)


def grad_check(f, tensors, analytic, epsilon=1e-3, tolerance=1e-3, max_checks=None, rng=None):
    """Compare ``analytic`` gradients with central differences of ``f``.

    ``f`` takes no arguments and reads the arrays in ``tensors`` (a name ->
    array mapping), which are perturbed in place and restored. With
    ``max_checks`` only that many randomly chosen coordinates per tensor are
    probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    errors = {}
    for name, x in tensors.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != x.shape:
            raise ValueError(f"analytic gradient for {name} has shape {a.shape}, expected {x.shape}")
        flat = x.reshape(-1)
        if flat.base is None and x.size:
            raise ValueError(f"{name} must be contiguous so it can be perturbed in place")
        coords = np.arange(x.size)
        if max_checks is not None and x.size > max_checks:
            coords = rng.choice(x.size, size=max_checks, replace=False)
        worst = 0.0
        af = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + DTYPE(epsilon)
            fp = f()
            flat[i] = orig - DTYPE(epsilon)
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2.0 * epsilon)
            worst = max(worst, float(relative_error(af[i], num)))
        errors[name] = worst
    return GradCheckReport(errors, tolerance)


def directional_check(f, x, grad, directions, epsilon=1e-3, rng=None) -> float:
    """Worst relative error of ``<grad, v>`` against central differences of ``f`` along ``x + eps * v``.

    ``v`` is drawn from U(0.5, 1.5) per coordinate. One probe moves every
    coordinate at once, so the difference stays far above float32 rounding
    even when each single coordinate has too small an effect to resolve.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    orig = x.copy()
    g = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for _ in range(directions):
        v = rng.uniform(0.5, 1.5, x.shape)
        x[...] = orig + epsilon * v
        fp = f()
        x[...] = orig - epsilon * v
        fm = f()
        x[...] = orig
        num = (fp - fm) / (2.0 * epsilon)
        worst = max(worst, float(relative_error(np.sum(g * v), num)))
    return worst


def check_layer(layer: Layer | Sequential, x, epsilon=1e-3, tolerance=1e-3, max_checks=None, seed=0,
                train=False, input_directions=None):
    """Gradient-check a layer against the scalar ``sum(forward(x) * G)``.

    ``G`` is drawn from U(0.5, 1.5): a same-sign projection keeps the
    objective well away from cancellation, so float32 central differences
    resolve every coordinate. With ``train`` the forward pass runs in
    training mode with a dropout mask that is re-drawn identically on every
    call. Both parameters and the input are checked; with
    ``input_directions`` the input is probed along that many random
    directions (:func:`directional_check`) instead of per coordinate.
    """
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(x, dtype=DTYPE)

    def run():
        return layer.forward(x, train=train, rng=np.random.default_rng(seed + 1) if train else None)

    out = run()
    proj = rng.uniform(0.5, 1.5, out.shape).astype(DTYPE)

    if isinstance(layer, Sequential):
        params = layer.parameters()
        dx = layer.backward(proj)
        pgrads = layer.grads
    else:
        params = layer.params
        lg = layer.backward(proj)
        dx, pgrads = lg.input, lg.params

    def f():
        return float(np.sum(run().astype(np.float64) * proj))

    tensors = dict(params)
    analytic = dict(pgrads)
    if input_directions is None:
        tensors["input"] = x
        analytic["input"] = dx
    report = grad_check(f, tensors, analytic, epsilon, tolerance, max_checks, rng)
    if input_directions is not None:
        report.errors["input (directional)"] = directional_check(f, x, dx, input_directions, epsilon, rng)
    return report


def make_positive(layer, rng):
    """Shift weights positive and draw positive biases (keeps ReLU nets away from kinks)."""
    w = layer.params["weight"]
    w[...] = np.abs(w) + DTYPE(0.05)
    layer.params["bias"][...] = rng.uniform(0.0, 0.5, layer.params["bias"].shape)
    return layer


def _case(kind, seed):
    """Randomised small layer + input for one suite entry."""
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 5))
    if kind == "conv2d":
        cin, cout, side = (int(v) for v in (r.integers(1, 9), r.integers(1, 9), 2 * r.integers(2, 9)))
        return make_positive(Conv2D(cin, cout, rng=r), r), r.uniform(0.1, 1.0, (n, cin, side, side)), {}
    if kind == "dense":
        fin, fout = int(r.integers(2, 40)), int(r.integers(2, 20))
        return make_positive(Dense(fin, fout, rng=r), r), r.uniform(0.1, 1.0, (n, fin)), {}
    if kind == "relu":
        shape = (n, int(r.integers(1, 5)), int(r.integers(1, 7)), int(r.integers(1, 7)))
        mag = r.uniform(0.05, 1.0, shape)
        return ReLU(), mag * r.choice([-1.0, 1.0], shape), {}
    if kind == "maxpool2x2":
        shape = (n, int(r.integers(1, 5)), 2 * int(r.integers(1, 5)), 2 * int(r.integers(1, 5)))
        # distinct values 0.01 apart: no window changes its argmax under a 1e-3 nudge
        vals = r.permutation(np.prod(shape)).reshape(shape) * 0.01
        return MaxPool2x2(), vals, {}
    if kind == "dropout":
        shape = (n, int(r.integers(1, 5)), int(r.integers(1, 7)))
        return Dropout(float(r.uniform(0.1, 0.9))), r.uniform(-1.0, 1.0, shape), {"train": True}
    if kind == "flatten":
        shape = (n, int(r.integers(1, 5)), int(r.integers(1, 5)), int(r.integers(1, 5)))
        return Flatten(), r.uniform(-1.0, 1.0, shape), {}
    raise ValueError(f"unknown layer kind {kind!r}")


LAYER_KINDS = ("conv2d", "dense", "relu", "maxpool2x2", "dropout", "flatten")


def check_softmax_cross_entropy(seed, epsilon=1e-3, tolerance=1e-3):
    r = np.random.default_rng(seed)
    k, n = int(r.integers(2, 7)), int(r.integers(1, 6))
    z = r.uniform(-1.0, 1.0, (n, k)).astype(DTYPE)
    y = r.integers(0, k, n)
    g = softmax_cross_entropy_backward(softmax(z), y)
    return grad_check(lambda: cross_entropy(softmax(z), y), {"logits": z}, {"logits": g},
                      epsilon, tolerance, rng=r)


def layer_suite(seeds=range(10), tolerance=1e-3, max_checks=300) -> dict[str, list[GradCheckReport]]:
    """Finite-difference check of every layer type over randomised small shapes."""
    out = {}
    for kind in LAYER_KINDS:
        reports = []
        for s in seeds:
            layer, x, kw = _case(kind, s)
            reports.append(check_layer(layer, x, tolerance=tolerance, max_checks=max_checks, seed=s, **kw))
        out[kind] = reports
    out["softmax_cross_entropy"] = [check_softmax_cross_entropy(s, tolerance=tolerance) for s in seeds]
    return out
