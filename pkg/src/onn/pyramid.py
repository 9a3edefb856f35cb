"""Zoom-level schedule, focal-point crop placement and reverse-cascade pyramids.

Level ``l`` (1-based) has resolution ``round(c * z**(l-1))``; level ``L`` is
the ``C x C`` base itself and each lower level is resampled from the level
directly above it. A ``c x c`` window centred on the focal point is cut from
every level, shifted inward when it would leave the image, so level 1 is
always the whole (downsampled) image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import Image, crop, resize


class PyramidError(ValueError):
    pass


@dataclass(frozen=True)
class FocalPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise PyramidError(f"focal point ({self.x}, {self.y}) outside [0,1]^2")


DEFAULT_FOCAL_POINTS = (
    FocalPoint(0.5, 0.5),
    FocalPoint(0.25, 0.25),
    FocalPoint(0.25, 0.75),
    FocalPoint(0.75, 0.25),
    FocalPoint(0.75, 0.75),
)


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def calibrate_zoom(base_size: int, crop_size: int, levels: int) -> float:
    """Zoom factor taking ``crop_size`` to ``base_size`` in ``levels - 1`` steps."""
    if not base_size > crop_size >= 1:
        raise PyramidError(f"need C > c >= 1, got C={base_size}, c={crop_size}")
    if levels < 2:
        raise PyramidError(f"need at least 2 levels, got {levels}")
    return (base_size / crop_size) ** (1.0 / (levels - 1))


def level_resolution(crop_size: int, zoom: float, level: int) -> int:
    if level < 1:
        raise PyramidError(f"levels are numbered from 1, got {level}")
    return round_half_away(crop_size * zoom ** (level - 1))


def extraction_origin(focal: FocalPoint, resolution: int, crop_size: int) -> tuple[int, int]:
    """Top-left corner of the ``crop_size`` window centred on ``focal``, clamped in-bounds."""
    if resolution < crop_size:
        raise PyramidError(f"level resolution {resolution} smaller than crop size {crop_size}")
    hi = resolution - crop_size
    half = crop_size / 2
    x0 = min(max(round_half_away(focal.x * resolution - half), 0), hi)
    y0 = min(max(round_half_away(focal.y * resolution - half), 0), hi)
    return x0, y0


@dataclass(frozen=True)
class PyramidConfig:
    base_size: int = 152
    crop_size: int = 32
    levels: int = 4
    zoom: float | None = None
    focal_set: tuple[FocalPoint, ...] = field(default=DEFAULT_FOCAL_POINTS)

    def __post_init__(self):
        if not self.base_size > self.crop_size >= 1:
            raise PyramidError(f"need C > c >= 1, got C={self.base_size}, c={self.crop_size}")
        if self.levels < 2:
            raise PyramidError(f"need at least 2 levels, got {self.levels}")
        if not self.focal_set:
            raise PyramidError("focal set must not be empty")
        object.__setattr__(self, "focal_set", tuple(self.focal_set))
        if self.zoom is None:
            object.__setattr__(self, "zoom", calibrate_zoom(self.base_size, self.crop_size, self.levels))
        if self.zoom <= 1.0:
            raise PyramidError(f"zoom must exceed 1, got {self.zoom}")
        top = level_resolution(self.crop_size, self.zoom, self.levels)
        if top != self.base_size:
            raise PyramidError(
                f"zoom {self.zoom} gives top level {top}, expected base size {self.base_size}"
            )

    @property
    def resolutions(self) -> list[int]:
        return [level_resolution(self.crop_size, self.zoom, l) for l in range(1, self.levels + 1)]


@dataclass(frozen=True)
class LevelView:
    level: int
    resolution: int
    origin: tuple[int, int]
    view: Image


@dataclass(frozen=True)
class FocalPyramid:
    focal: FocalPoint
    views: tuple[LevelView, ...]


class _Counter:
    """Counts level resampling passes and pyramid assemblies (instrumentation for tests)."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.resamples = 0
        self.builds = 0


stats = _Counter()


def _check_base(base: Image, cfg: PyramidConfig):
    if base.size != (cfg.base_size, cfg.base_size):
        raise PyramidError(
            f"base image is {base.width}x{base.height}, config expects {cfg.base_size}x{cfg.base_size}"
        )


def cache_resized_levels(base: Image, cfg: PyramidConfig) -> list[Image]:
    """Full resampled image for every level, index 0 = level 1 (size ``c``)."""
    _check_base(base, cfg)
    stats.resamples += 1
    res = cfg.resolutions
    levels = [base]
    for r in reversed(res[:-1]):
        levels.append(resize(levels[-1], r, r))
    levels.reverse()
    return levels


def pyramid_from_levels(levels: list[Image], focal: FocalPoint, cfg: PyramidConfig) -> FocalPyramid:
    if len(levels) != cfg.levels:
        raise PyramidError(f"expected {cfg.levels} level images, got {len(levels)}")
    stats.builds += 1
    c = cfg.crop_size
    views = []
    for l, img in enumerate(levels, start=1):
        x0, y0 = extraction_origin(focal, img.width, c)
        views.append(LevelView(l, img.width, (x0, y0), crop(img, x0, y0, c, c)))
    return FocalPyramid(focal, tuple(views))


def build_pyramid(base: Image, focal: FocalPoint, cfg: PyramidConfig) -> FocalPyramid:
    return pyramid_from_levels(cache_resized_levels(base, cfg), focal, cfg)


def direct_level(base: Image, level: int, cfg: PyramidConfig) -> Image:
    """Level image resampled straight from the base (cascade cross-check only)."""
    r = level_resolution(cfg.crop_size, cfg.zoom, level)
    return resize(base, r, r)


def focal_view_stack(base: Image, cfg: PyramidConfig) -> np.ndarray:
    """All views for all focal points as ``[|F|, L, channels, c, c]`` float32.

    The level cascade is computed once and shared by every focal point.
    """
    levels = cache_resized_levels(base, cfg)
    out = np.empty((len(cfg.focal_set), cfg.levels, base.channels, cfg.crop_size, cfg.crop_size), np.float32)
    for f, focal in enumerate(cfg.focal_set):
        for lv in pyramid_from_levels(levels, focal, cfg).views:
            out[f, lv.level - 1] = lv.view.to_chw()
    return out
