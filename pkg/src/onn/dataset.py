"""Folder datasets, stratified splits and a scale-varied synthetic shapes generator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import Image, ImageError, load_image, resize, save_image, to_channels
from .pyramid import PyramidConfig, cache_resized_levels

log = logging.getLogger(__name__)

IMAGE_EXTS = {".png", ".ppm", ".pgm", ".pnm"}
SHAPE_CLASSES = ("disk", "square", "triangle", "ring", "cross")
MIN_SCALE, MAX_SCALE = 0.08, 0.80
MIN_CONTRAST = 0.3
NOISE_SIGMA = 0.02
SUPERSAMPLE = 4


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    id: int
    label: int
    image: Image | None = None
    path: Path | None = None
    meta: dict = field(default_factory=dict)

    def load(self) -> Image:
        if self.image is None:
            if self.path is None:
                raise DatasetError(f"sample {self.id} has neither pixels nor a path")
            self.image = load_image(self.path)
        return self.image


@dataclass
class DatasetSplit:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    class_names: list[str]
    scrubbed: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def all_samples(self) -> list[Sample]:
        return self.train + self.val + self.test


def split_samples(samples, class_names, seed=0, fractions=(0.8, 0.1, 0.1), scrubbed=0) -> DatasetSplit:
    """Seeded stratified split; each class is shuffled and cut by ``fractions``."""
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for k in range(len(class_names)):
        members = [s for s in samples if s.label == k]
        if not members:
            raise DatasetError(f"class {class_names[k]!r} has no samples")
        order = rng.permutation(len(members))
        n_train = max(1, int(round(fractions[0] * len(members))))
        n_val = int(round(fractions[1] * len(members)))
        cuts = (n_train, n_train + n_val)
        for i, j in enumerate(order):
            parts[0 if i < cuts[0] else 1 if i < cuts[1] else 2].append(members[j])
    for p in parts:
        p.sort(key=lambda s: s.id)
    return DatasetSplit(parts[0], parts[1], parts[2], list(class_names), scrubbed)


def load_folder_dataset(root, base_size, per_class_cap=1000, seed=0, channels=3) -> DatasetSplit:
    """Load ``root/<class>/<image>``; images are stretched to ``base_size`` squared.

    Files that fail to decode are skipped and counted in ``scrubbed``; each
    class keeps at most ``per_class_cap`` usable images in filename order.
    """
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not class_dirs:
        raise DatasetError(f"no class directories under {root}")
    samples, scrubbed = [], 0
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_EXTS)
        if not files:
            raise DatasetError(f"class directory {cdir} contains no images")
        kept = 0
        for f in files:
            try:
                img = load_image(f)
            except ImageError as exc:
                log.warning("skipping unreadable image: %s", exc)
                scrubbed += 1
                continue
            if kept >= per_class_cap:
                continue
            img = to_channels(resize(img, base_size, base_size), channels)
            samples.append(Sample(len(samples), label, img, f))
            kept += 1
    if scrubbed:
        log.info("scrubbed %d unreadable files", scrubbed)
    if not samples:
        raise DatasetError(f"no usable images under {root}")
    return split_samples(samples, [d.name for d in class_dirs], seed, scrubbed=scrubbed)


# --- synthetic shapes ------------------------------------------------------------


def shape_inside(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Membership in the unit shape; ``(u, v)`` in [-1, 1] with v pointing down."""
    if kind == "disk":
        return u * u + v * v <= 1.0
    if kind == "square":
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    if kind == "triangle":
        return (v <= 1.0) & (np.abs(u) <= (v + 1.0) / 2.0)
    if kind == "ring":
        r2 = u * u + v * v
        return (r2 <= 1.0) & (r2 >= 0.25)
    if kind == "cross":
        a, b = np.abs(u), np.abs(v)
        return ((a <= 1 / 3) & (b <= 1.0)) | ((b <= 1 / 3) & (a <= 1.0))
    raise DatasetError(f"unknown shape {kind!r}")


def shape_coverage(kind, size, cx, cy, extent, supersample=SUPERSAMPLE) -> np.ndarray:
    """Fraction of each pixel of a ``size``-square canvas covered by the shape."""
    offs = (np.arange(supersample) + 0.5) / supersample
    half = extent / 2.0
    cov = np.zeros((size, size))
    x_lo, x_hi = max(int(np.floor(cx - half)), 0), min(int(np.ceil(cx + half)) + 1, size)
    y_lo, y_hi = max(int(np.floor(cy - half)), 0), min(int(np.ceil(cy + half)) + 1, size)
    xs = (np.arange(x_lo, x_hi)[:, None] + offs[None, :]).ravel()
    ys = (np.arange(y_lo, y_hi)[:, None] + offs[None, :]).ravel()
    u = (xs[None, :] - cx) / half
    v = (ys[:, None] - cy) / half
    inside = shape_inside(kind, u, v).astype(np.float64)
    h, w = y_hi - y_lo, x_hi - x_lo
    cov[y_lo:y_hi, x_lo:x_hi] = inside.reshape(h, supersample, w, supersample).mean(axis=(1, 3))
    return cov


def render_shape(kind, size, cx, cy, extent, fg, bg, noise=None) -> Image:
    cov = shape_coverage(kind, size, cx, cy, extent)
    px = bg + (fg - bg) * cov
    if noise is not None:
        px = px + noise
    return Image(np.clip(px, 0.0, 1.0).astype(np.float32)[:, :, None])


def generate_shapes_dataset(num_classes=4, per_class=500, base_size=152, seed=0) -> DatasetSplit:
    """One antialiased shape per image at a random scale, position and contrast."""
    if not 2 <= num_classes <= len(SHAPE_CLASSES):
        raise DatasetError(f"num_classes must be in [2, {len(SHAPE_CLASSES)}], got {num_classes}")
    rng = np.random.default_rng(seed)
    names = list(SHAPE_CLASSES[:num_classes])
    samples = []
    for label in range(num_classes):
        for _ in range(per_class):
            scale = rng.uniform(MIN_SCALE, MAX_SCALE)
            extent = scale * base_size
            half = extent / 2.0
            cx = rng.uniform(half, base_size - half)
            cy = rng.uniform(half, base_size - half)
            while True:
                fg, bg = rng.uniform(0.0, 1.0, 2)
                if abs(fg - bg) >= MIN_CONTRAST:
                    break
            noise = rng.normal(0.0, NOISE_SIGMA, (base_size, base_size))
            img = render_shape(names[label], base_size, cx, cy, extent, fg, bg, noise)
            meta = {"scale": scale, "x": cx / base_size, "y": cy / base_size, "fg": fg, "bg": bg}
            samples.append(Sample(len(samples), label, img, None, meta))
    return split_samples(samples, names, seed)


def write_folder_dataset(split: DatasetSplit, root, ext=".png") -> Path:
    """Write ``root/<class>/<id>.<ext>`` plus ``manifest.csv`` (id, class, scale, x, y)."""
    root = Path(root)
    for name in split.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    rows = []
    for s in sorted(split.all_samples(), key=lambda s: s.id):
        cls = split.class_names[s.label]
        path = root / cls / f"{s.id:06d}{ext}"
        save_image(s.load(), path)
        rows.append([s.id, cls, s.meta.get("scale", ""), s.meta.get("x", ""), s.meta.get("y", "")])
    manifest = root / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "class", "scale", "x", "y"])
        w.writerows(rows)
    return manifest


def baseline_view(image: Image, cfg: PyramidConfig) -> Image:
    """``c x c`` whole-image view; identical to level 1 of every focal pyramid."""
    if image.size == (cfg.crop_size, cfg.crop_size):
        return image
    return cache_resized_levels(image, cfg)[0]
