"""Core CNN: VGG-style blocks, baseline and focal-point training, evaluation, hidden features.

Focal-point training treats every level view of a pyramid as an independent
labelled sample. Each epoch draws one focal point per training image, so an
epoch over ``N`` images consumes ``N * L`` samples; validation scores every
view of every focal point.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .dataset import Sample
from .engine import (
    Conv2D,
    Dense,
    Dropout,
    EngineError,
    Flatten,
    MaxPool2x2,
    ReLU,
    Sequential,
    cross_entropy,
    softmax,
    softmax_cross_entropy_backward,
    sgd_step,
)
from .engine.ops import check_finite
from .pyramid import PyramidConfig, PyramidError, focal_view_stack

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class CoreCnnSpec:
    input_size: int = 32
    in_channels: int = 1
    blocks: tuple[tuple[int, int], ...] = ((16, 2), (32, 2), (64, 2))  # (channels, convs)
    hidden: int = 128
    num_classes: int = 4
    dropout: float = 0.5
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        if not self.blocks:
            raise ValueError("need at least one conv block")
        if self.input_size % (2 ** len(self.blocks)):
            raise ValueError(
                f"input size {self.input_size} not divisible by 2^{len(self.blocks)} "
                "(one 2x2 pool per block)"
            )
        if self.hidden < 1 or self.num_classes < 2:
            raise ValueError("need hidden >= 1 and at least 2 classes")

    @property
    def flat_features(self) -> int:
        side = self.input_size // 2 ** len(self.blocks)
        return self.blocks[-1][0] * side * side


class CoreCnn(Sequential):
    """``[conv+relu]*n -> pool -> dropout`` blocks, then ``hidden`` dense+ReLU and the class layer."""

    HIDDEN = "hidden_relu"

    def __init__(self, spec: CoreCnnSpec, seed=0):
        rng = np.random.default_rng(seed)
        layers = []
        cin = spec.in_channels
        for b, (cout, nconv) in enumerate(spec.blocks, start=1):
            for i in range(1, nconv + 1):
                layers.append((f"block{b}.conv{i}", Conv2D(cin, cout, spec.kernel, "same", rng)))
                layers.append((f"block{b}.relu{i}", ReLU()))
                cin = cout
            layers.append((f"block{b}.pool", MaxPool2x2()))
            layers.append((f"block{b}.drop", Dropout(spec.dropout)))
        layers += [
            ("flatten", Flatten()),
            ("hidden", Dense(spec.flat_features, spec.hidden, rng)),
            (self.HIDDEN, ReLU()),
            ("output", Dense(spec.hidden, spec.num_classes, rng, init="zeros")),
        ]
        super().__init__(layers)
        self.spec = spec

    def check_input(self, x):
        s = self.spec
        want = (s.in_channels, s.input_size, s.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != want:
            raise EngineError(f"core CNN expects [N, {want[0]}, {want[1]}, {want[2]}], got {x.shape}")


def build_core_cnn(spec: CoreCnnSpec, seed=0) -> CoreCnn:
    return CoreCnn(spec, seed)


def _batched(fn, x, batch):
    return np.concatenate([fn(x[i:i + batch]) for i in range(0, len(x), batch)]) if len(x) else None


def predict_proba(model: Sequential, x, batch=256) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    if isinstance(model, CoreCnn):
        model.check_input(x)
    return _batched(lambda b: softmax(model.forward(b)), x, batch)


def extract_hidden(model: CoreCnn, x, batch=256) -> np.ndarray:
    """Eval-mode activations of the final hidden layer (after ReLU), ``[N, hidden]``."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    model.check_input(x)
    return _batched(lambda b: model.forward(b, stop_after=CoreCnn.HIDDEN), x, batch)


def evaluate(model, x, y, k=5, batch=256) -> tuple[float, float]:
    """``(accuracy, top-k accuracy)`` in eval mode."""
    probs = predict_proba(model, x, batch)
    return metrics.accuracy(probs, y), metrics.topk_accuracy(probs, y, k)


# --- data carriers ----------------------------------------------------------------


@dataclass
class LabeledArrays:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class FocalViews:
    """Pre-cut pyramid views ``[N, |F|, L, channels, c, c]`` for a list of samples."""

    views: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def num_focal(self) -> int:
        return self.views.shape[1]

    @property
    def levels(self) -> int:
        return self.views.shape[2]

    def baseline(self) -> LabeledArrays:
        # level 1 is the whole image and identical for every focal point
        return LabeledArrays(np.ascontiguousarray(self.views[:, 0, 0]), self.labels)

    def all_views(self) -> LabeledArrays:
        n, f, l = self.views.shape[:3]
        x = self.views.reshape(n * f * l, *self.views.shape[3:])
        return LabeledArrays(x, np.repeat(self.labels, f * l))

    def focal(self, index: int) -> LabeledArrays:
        n, f, l = self.views.shape[:3]
        x = np.ascontiguousarray(self.views[:, index]).reshape(n * l, *self.views.shape[3:])
        return LabeledArrays(x, np.repeat(self.labels, l))


def view_census(views: FocalViews) -> int:
    """Number of pixel-distinct views over every image, focal point and level."""
    flat = views.views.reshape(-1, int(np.prod(views.views.shape[3:])))
    return len({row.tobytes() for row in flat})


def build_focal_views(samples: list[Sample], cfg: PyramidConfig) -> FocalViews:
    if not samples:
        raise TrainingError("no samples")
    stacks = []
    for s in samples:
        img = s.load()
        if img.size != (cfg.base_size, cfg.base_size):
            raise PyramidError(
                f"sample {s.id} is {img.width}x{img.height}; pyramid config needs "
                f"{cfg.base_size}x{cfg.base_size}"
            )
        stacks.append(focal_view_stack(img, cfg))
    return FocalViews(
        np.stack(stacks),
        np.array([s.label for s in samples], dtype=np.int64),
        np.array([s.id for s in samples], dtype=np.int64),
    )


# --- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    top_k: int = 5
    eval_batch: int = 256

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch size and max epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    val_top5: float
    samples: int
    extra: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    model: Sequential
    history: list[EpochRecord]
    best_epoch: int
    draws: list[np.ndarray] = field(default_factory=list)

    @property
    def best(self) -> EpochRecord:
        return self.history[self.best_epoch - 1]


HISTORY_FIELDS = ["epoch", "train_loss", "val_loss", "val_acc", "val_top5"]


def write_history_csv(history: list[EpochRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.val_top5)])


def train_step(model: Sequential, xb, yb, lr, rng) -> float:
    logits = check_finite(model.forward(xb, train=True, rng=rng), "forward pass")
    probs = softmax(logits)
    loss = cross_entropy(probs, yb)
    model.backward(softmax_cross_entropy_backward(probs, yb))
    sgd_step(model.parameters(), model.grads, lr)
    return loss


def validation_scores(model, data: LabeledArrays, k, batch) -> tuple[float, float, float]:
    probs = predict_proba(model, data.x, batch)
    return (
        cross_entropy(probs, data.y),
        metrics.accuracy(probs, data.y),
        metrics.topk_accuracy(probs, data.y, k),
    )


def fit(model, epoch_data, val: LabeledArrays, cfg: TrainConfig, rng=None, on_epoch=None) -> TrainResult:
    """Mini-batch SGD with early stopping on validation loss.

    ``epoch_data(epoch, rng)`` returns the ``LabeledArrays`` for one epoch.
    The best-validation weights are restored before returning.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    history, best_loss, best_state, best_epoch, stale = [], np.inf, None, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        data = epoch_data(epoch, rng)
        if len(data) == 0:
            raise TrainingError("empty training set")
        order = rng.permutation(len(data))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            total += train_step(model, data.x[idx], data.y[idx], cfg.learning_rate, rng) * len(idx)
        vloss, vacc, vtop = validation_scores(model, val, cfg.top_k, cfg.eval_batch)
        rec = EpochRecord(epoch, total / len(data), vloss, vacc, vtop, len(data))
        if on_epoch is not None:
            on_epoch(rec, model)
        history.append(rec)
        log.info("epoch %d train %.4f val %.4f acc %.4f", epoch, rec.train_loss, vloss, vacc)
        if vloss < best_loss:
            best_loss, best_state, best_epoch, stale = vloss, model.state_dict(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch)


def train_baseline(model, train: LabeledArrays, val: LabeledArrays, cfg: TrainConfig) -> TrainResult:
    """Train on ``c x c`` whole-image views only."""
    if len(train) == 0:
        raise TrainingError("empty training set")
    return fit(model, lambda epoch, rng: train, val, cfg)


def train_focal(model, train: FocalViews, val: FocalViews, cfg: TrainConfig) -> TrainResult:
    """Focal-point training: one random focal point per image per epoch, all L views as samples.

    Early stopping uses the loss over every view of every validation focal
    point; the whole-image validation accuracy is kept in ``record.extra``.
    """
    if len(train) == 0:
        raise TrainingError("empty training set")
    draws = []
    n, nf, nl = train.views.shape[:3]

    def epoch_data(epoch, rng):
        d = rng.integers(0, nf, size=n)
        draws.append(d)
        x = train.views[np.arange(n), d].reshape(n * nl, *train.views.shape[3:])
        return LabeledArrays(x, np.repeat(train.labels, nl))

    base_val = val.baseline()

    def whole_image_scores(rec, m):
        acc, top = evaluate(m, base_val.x, base_val.y, cfg.top_k, cfg.eval_batch)
        rec.extra.update(val_acc_c=acc, val_top5_c=top)

    result = fit(model, epoch_data, val.all_views(), cfg, on_epoch=whole_image_scores)
    result.draws = draws
    return result


def config_dict(cfg) -> dict:
    return asdict(cfg)


def core_cnn_gradcheck(spec: CoreCnnSpec, seed=0, tolerance=5e-3, max_checks=25, batch=2, epsilon=1e-2):
    """Finite-difference check of the whole CNN (eval mode) on randomly sampled coordinates.

    Weights are set to U(0.5, 1.5) / fan_in and inputs to U(0.1, 1), so every
    pre-activation is positive and of order one. No ReLU is at its kink and
    the net is piecewise linear, so a central difference has no truncation
    error unless a pool argmax flips; the larger ``epsilon`` keeps float32
    rounding small against the signal. A single input pixel moves the output
    by less than float32 resolves, so the input gradient is checked along
    random directions.
    """
    from .engine import check_layer

    model = build_core_cnn(spec, seed)
    rng = np.random.default_rng(seed)
    for name, layer in model.layers:
        if isinstance(layer, (Conv2D, Dense)):
            w = layer.params["weight"]
            fan_in = w.size // w.shape[0] if isinstance(layer, Conv2D) else w.shape[0]
            w[...] = rng.uniform(0.5, 1.5, w.shape) / fan_in
            layer.params["bias"][...] = rng.uniform(0.0, 0.1, layer.params["bias"].shape)
    x = rng.uniform(0.1, 1.0, (batch, spec.in_channels, spec.input_size, spec.input_size))
    return check_layer(model, x, epsilon, tolerance, max_checks, seed, input_directions=max_checks)
