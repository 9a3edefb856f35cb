"""Feature cache, unification network and focal-point merging.

A trained core CNN maps each of the ``L`` views of a focal pyramid to an
``h``-wide hidden vector. The vectors are concatenated level-ascending
(level 1 first) into one ``h*L`` record per (image, focal point) and written
once to an ONNC cache file; the unifier then trains on cached vectors alone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .classifier import (
    CoreCnn,
    FocalViews,
    LabeledArrays,
    TrainConfig,
    TrainResult,
    TrainingError,
    build_focal_views,
    extract_hidden,
    fit,
)
from .engine import Dense, Dropout, ReLU, Sequential, softmax
from .engine.checkpoint import parameter_checksum
from .imaging import Image
from .pyramid import FocalPoint, PyramidConfig, PyramidError, build_pyramid

MAGIC = b"ONNC"
VERSION = 1
_HEADER = struct.Struct("<4sI32s5I")  # magic, version, checksum, h, L, K, |F|, N


class CacheError(ValueError):
    pass


def record_dtype(width: int) -> np.dtype:
    return np.dtype([("id", "<u4"), ("focal", "<u2"), ("label", "<u2"), ("x", "<f4", (width,))])


@dataclass
class FeatureCache:
    """Records keyed by (image id, focal index); ``features`` is ``[R, h*L]``."""

    hidden: int
    levels: int
    num_classes: int
    num_focal: int
    ids: np.ndarray
    focal: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    checksum: bytes = b"\0" * 32

    def __post_init__(self):
        n = len(self.ids)
        if not (len(self.focal) == len(self.labels) == len(self.features) == n):
            raise CacheError("cache columns have different lengths")
        if self.features.ndim != 2 or self.features.shape[1] != self.width:
            raise CacheError(f"record width {self.features.shape[1:]} != h*L = {self.width}")
        if len(self.checksum) != 32:
            raise CacheError("model checksum must be 32 bytes")
        keys = self.ids.astype(np.int64) * 65536 + self.focal.astype(np.int64)
        if len(np.unique(keys)) != n:
            raise CacheError("duplicate (image id, focal index) keys")
        if n and (self.labels.max() >= self.num_classes or self.focal.max() >= self.num_focal):
            raise CacheError("label or focal index out of range for the header")

    @property
    def width(self) -> int:
        return self.hidden * self.levels

    @property
    def num_images(self) -> int:
        return len(np.unique(self.ids))

    def __len__(self):
        return len(self.ids)

    def level_slice(self, level: int) -> slice:
        """Columns holding level ``level`` (1-based)."""
        return slice((level - 1) * self.hidden, level * self.hidden)

    def record(self, image_id: int, focal_index: int) -> np.ndarray:
        hit = np.flatnonzero((self.ids == image_id) & (self.focal == focal_index))
        if not len(hit):
            raise CacheError(f"no record for image {image_id}, focal {focal_index}")
        return self.features[hit[0]]

    def arrays(self) -> LabeledArrays:
        return LabeledArrays(self.features, self.labels.astype(np.int64))

    def save(self, path) -> None:
        path = Path(path)
        recs = np.empty(len(self), dtype=record_dtype(self.width))
        recs["id"], recs["focal"], recs["label"], recs["x"] = self.ids, self.focal, self.labels, self.features
        head = _HEADER.pack(
            MAGIC, VERSION, self.checksum, self.hidden, self.levels, self.num_classes,
            self.num_focal, self.num_images,
        )
        try:
            with path.open("wb") as fh:
                fh.write(head)
                fh.write(recs.tobytes())
        except OSError as exc:
            raise CacheError(f"cannot write feature cache {path}: {exc}") from exc


def load_feature_cache(path, mmap=True) -> FeatureCache:
    """Read an ONNC file; with ``mmap`` the feature matrix stays on disk (read-only)."""
    path = Path(path)
    try:
        size = path.stat().st_size
        with path.open("rb") as fh:
            raw = fh.read(_HEADER.size)
    except OSError as exc:
        raise CacheError(f"cannot read feature cache {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, checksum, h, levels, k, nf, _n_images = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CacheError(f"{path}: unsupported version {version}")
    dt = record_dtype(h * levels)
    body = size - _HEADER.size
    if body % dt.itemsize:
        raise CacheError(f"{path}: truncated record ({body} bytes is not a multiple of {dt.itemsize})")
    count = body // dt.itemsize
    if mmap and count:
        recs = np.memmap(path, dtype=dt, mode="r", offset=_HEADER.size, shape=(count,))
    else:
        recs = np.fromfile(path, dtype=dt, offset=_HEADER.size, count=count)
    return FeatureCache(
        h, levels, k, nf,
        np.asarray(recs["id"]), np.asarray(recs["focal"]), np.asarray(recs["label"]),
        recs["x"], checksum,
    )


def model_checksum(model) -> bytes:
    return parameter_checksum(model.parameters())


def build_feature_cache(core: CoreCnn, data, cfg: PyramidConfig, num_classes=None, batch=256) -> FeatureCache:
    """Hidden features for every image and every focal point of ``cfg.focal_set``.

    ``data`` is a ``FocalViews`` (pre-cut views) or a list of ``Sample`` whose
    pyramids are built here. Eval-mode forwards are batch-size invariant, so
    each record matches a fresh :func:`extract_hidden` of its views exactly.
    """
    views = data if isinstance(data, FocalViews) else build_focal_views(list(data), cfg)
    if len(views) == 0:
        raise TrainingError("no images to cache")
    if views.levels != cfg.levels or views.num_focal != len(cfg.focal_set):
        raise PyramidError(
            f"views hold {views.num_focal} focal points x {views.levels} levels; "
            f"config wants {len(cfg.focal_set)} x {cfg.levels}"
        )
    n, nf, nl = views.views.shape[:3]
    # level 1 is the whole image for every focal point: run it once per image
    whole = extract_hidden(core, np.ascontiguousarray(views.views[:, 0, 0]), batch)
    h = whole.shape[1]
    hidden = np.empty((n, nf, nl, h), dtype=np.float32)
    hidden[:, :, 0] = whole[:, None]
    if nl > 1:
        zoomed = np.ascontiguousarray(views.views[:, :, 1:]).reshape(n * nf * (nl - 1), *views.views.shape[3:])
        hidden[:, :, 1:] = extract_hidden(core, zoomed, batch).reshape(n, nf, nl - 1, h)
    k = num_classes if num_classes is not None else core.spec.num_classes
    return FeatureCache(
        h, nl, k, nf,
        np.repeat(views.ids, nf).astype(np.uint32),
        np.tile(np.arange(nf), n).astype(np.uint16),
        np.repeat(views.labels, nf).astype(np.uint16),
        hidden.reshape(n * nf, nl * h),
        model_checksum(core),
    )


# --- unification network ------------------------------------------------------------


@dataclass(frozen=True)
class UnifierSpec:
    input_width: int
    num_classes: int
    hidden: int = 128
    dropout: float = 0.75

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("unifier hidden width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.input_width < 1 or self.num_classes < 2:
            raise ValueError("need input width >= 1 and at least 2 classes")


class UnifierNet(Sequential):
    """``dropout -> dense(u) + ReLU -> dropout -> dense(K)``."""

    HIDDEN = "hidden_relu"

    def __init__(self, spec: UnifierSpec, seed=0):
        rng = np.random.default_rng(seed)
        super().__init__([
            ("drop_in", Dropout(spec.dropout)),
            ("hidden", Dense(spec.input_width, spec.hidden, rng)),
            (self.HIDDEN, ReLU()),
            ("drop_hidden", Dropout(spec.dropout)),
            ("output", Dense(spec.hidden, spec.num_classes, rng, init="zeros")),
        ])
        self.spec = spec


def _check_width(spec: UnifierSpec, cache: FeatureCache):
    if spec.input_width != cache.width:
        raise CacheError(f"unifier expects {spec.input_width}-wide inputs, cache records are {cache.width}")
    if spec.num_classes != cache.num_classes:
        raise CacheError(f"unifier has {spec.num_classes} classes, cache header says {cache.num_classes}")


def train_unifier(cache: FeatureCache, spec: UnifierSpec, cfg: TrainConfig, val_cache: FeatureCache,
                  model: UnifierNet | None = None) -> TrainResult:
    """SGD over cached records, each (image, focal) pair an independent sample."""
    if len(cache) == 0 or len(val_cache) == 0:
        raise TrainingError("empty feature cache")
    _check_width(spec, cache)
    _check_width(spec, val_cache)
    model = model if model is not None else UnifierNet(spec, cfg.seed)
    train = LabeledArrays(np.ascontiguousarray(cache.features), cache.labels.astype(np.int64))
    val = LabeledArrays(np.ascontiguousarray(val_cache.features), val_cache.labels.astype(np.int64))
    return fit(model, lambda epoch, rng: train, val, cfg)


def unified_probabilities(unifier: UnifierNet, features, batch=1024) -> np.ndarray:
    x = np.ascontiguousarray(features, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != unifier.spec.input_width:
        raise CacheError(f"unifier expects [N, {unifier.spec.input_width}] features, got {x.shape}")
    return np.concatenate([softmax(unifier.forward(x[i:i + batch])) for i in range(0, len(x), batch)])


def pyramid_features(core: CoreCnn, base: Image, focal: FocalPoint, cfg: PyramidConfig) -> np.ndarray:
    """Level-ascending concatenation of the hidden features of one focal pyramid."""
    pyr = build_pyramid(base, focal, cfg)
    views = np.stack([lv.view.to_chw() for lv in pyr.views])
    return extract_hidden(core, views).reshape(-1)


def predict_unified(core: CoreCnn, unifier: UnifierNet, base: Image, focal: FocalPoint,
                    cfg: PyramidConfig) -> np.ndarray:
    return unified_probabilities(unifier, pyramid_features(core, base, focal, cfg)[None])[0]


def merge_focal_predictions(predictions) -> np.ndarray:
    """Elementwise mean of the probability vectors of several focal points."""
    preds = [np.asarray(p, dtype=np.float64) for p in predictions]
    if not preds:
        raise ValueError("no predictions to merge")
    widths = {p.shape for p in preds}
    if len(widths) != 1 or preds[0].ndim != 1:
        raise ValueError(f"predictions must be equal-width vectors, got shapes {sorted(widths)}")
    return np.mean(np.stack(preds), axis=0)


def predict_merged(core: CoreCnn, unifier: UnifierNet, base: Image, focal_subset, cfg: PyramidConfig) -> np.ndarray:
    focal_subset = list(focal_subset)
    if not focal_subset:
        raise ValueError("empty focal subset")
    return merge_focal_predictions([predict_unified(core, unifier, base, f, cfg) for f in focal_subset])


# --- cache-level evaluation ---------------------------------------------------------


def merged_by_image(cache: FeatureCache, probs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Average record probabilities per image id -> ``(ids, probs, labels)``."""
    order = np.lexsort((cache.focal, cache.ids))
    ids = cache.ids[order]
    uniq, start = np.unique(ids, return_index=True)
    groups = np.split(np.asarray(probs)[order], start[1:])
    merged = np.stack([merge_focal_predictions(list(g)) for g in groups])
    labels = cache.labels[order][start].astype(np.int64)
    return uniq, merged, labels


def evaluate_unified(unifier: UnifierNet, cache: FeatureCache, k=5) -> tuple[float, float]:
    """Accuracy over all (image, focal) records, i.e. the mean single-focal accuracy."""
    probs = unified_probabilities(unifier, cache.features)
    labels = cache.labels.astype(np.int64)
    return metrics.accuracy(probs, labels), metrics.topk_accuracy(probs, labels, k)


def evaluate_merged(unifier: UnifierNet, cache: FeatureCache, k=5) -> tuple[float, float]:
    _, merged, labels = merged_by_image(cache, unified_probabilities(unifier, cache.features))
    return metrics.accuracy(merged, labels), metrics.topk_accuracy(merged, labels, k)
