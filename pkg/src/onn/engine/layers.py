"""Stateful layer objects and a sequential container.

Each layer keeps whatever its backward pass needs from the most recent
forward call. Parameters live in a per-layer ``params`` dict; the container
exposes them under dotted names (``"block1.conv1.weight"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .ops import DTYPE


@dataclass
class LayerGrads:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    input: np.ndarray | None = None


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Layer:
    params: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad) -> LayerGrads:
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, in_channels, out_channels, kernel=3, padding="same", rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.params["weight"] = he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.params["bias"] = np.zeros(out_channels, dtype=DTYPE)
        self.padding = padding
        self._cache = None

    def forward(self, x, train=False, rng=None):
        out, cols = ops.conv2d(x, self.params["weight"], self.params["bias"], self.padding, not train)
        self._cache = (x.shape, cols)
        return out

    def backward(self, grad):
        x_shape, cols = self._cache
        dx, dw, db = ops.conv2d_backward(grad, x_shape, cols, self.params["weight"], self.padding)
        return LayerGrads({"weight": dw, "bias": db}, dx)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, init="he"):
        """``init="zeros"`` is for a layer feeding softmax: the first loss is exactly ln K."""
        super().__init__()
        if init not in ("he", "zeros"):
            raise ValueError(f"unknown init {init!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (in_features, out_features)
        self.params["weight"] = he_uniform(rng, shape, in_features) if init == "he" else np.zeros(shape, DTYPE)
        self.params["bias"] = np.zeros(out_features, dtype=DTYPE)
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = ops.as_tensor(x)
        return ops.dense(self._x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        dx, dw, db = ops.dense_backward(grad, self._x, self.params["weight"])
        return LayerGrads({"weight": dw, "bias": db}, dx)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._x = x
        return ops.relu(x)

    def backward(self, grad):
        return LayerGrads(input=ops.relu_backward(grad, self._x))


class MaxPool2x2(Layer):
    def forward(self, x, train=False, rng=None):
        out, self._argmax = ops.maxpool2x2(x)
        return out

    def backward(self, grad):
        return LayerGrads(input=ops.maxpool2x2_backward(grad, self._argmax))


class Dropout(Layer):
    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ops.EngineError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        out, self._mask = ops.dropout(x, self.rate, rng, train)
        return out

    def backward(self, grad):
        return LayerGrads(input=ops.dropout_backward(grad, self._mask))


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return LayerGrads(input=grad.reshape(self._shape))


class Sequential:
    """Ordered, named layers with a logits-producing forward pass."""

    def __init__(self, layers):
        self.layers: list[tuple[str, Layer]] = list(layers)
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        self.grads: dict[str, np.ndarray] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            f"{lname}.{pname}": p
            for lname, layer in self.layers
            for pname, p in layer.params.items()
        }

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def forward(self, x, train=False, rng=None, stop_after=None):
        """Run layers in order; ``stop_after`` names the last layer to run."""
        x = ops.as_tensor(x)
        for name, layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
            if name == stop_after:
                break
        return x

    def backward(self, grad):
        """Backpropagate ``grad`` (w.r.t. the output) and fill :attr:`grads`."""
        grads = {}
        for lname, layer in reversed(self.layers):
            lg = layer.backward(grad)
            for pname, g in lg.params.items():
                grads[f"{lname}.{pname}"] = g
            grad = lg.input
        self.grads = grads
        return grad

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ops.EngineError(f"state is missing parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ops.EngineError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p[...] = state[k]
