"""Image carrier, separable area/bilinear resampling, cropping and file I/O.

Pixels are float32 in ``[0, 1]`` stored as a ``(height, width, channels)``
array. Resampling is separable: each axis gets a dense weight matrix, area
averaging when shrinking and bilinear interpolation when enlarging, and the
two matrices are applied in float64 before rounding back to float32.
"""

from __future__ import annotations

import functools
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (height, width, channels) float32 in [0, 1]

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ImageError(f"pixels must be (H, W, 1|3), got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError(f"image dimensions must be positive, got {px.shape[1]}x{px.shape[0]}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0 or not np.isfinite(px).all()):
            raise ImageError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def to_chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1))

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def constant(width, height, value, channels=1) -> Image:
    return Image(np.full((height, width, channels), value, dtype=np.float32))


def _area_weights(src: int, dst: int) -> np.ndarray:
    # destination pixel i covers source interval [i*s, (i+1)*s)
    s = src / dst
    edges = np.arange(dst + 1) * s
    lo, hi = edges[:-1, None], edges[1:, None]
    j = np.arange(src)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / s


def _bilinear_weights(src: int, dst: int) -> np.ndarray:
    u = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    u = np.clip(u, 0.0, src - 1)
    j0 = np.floor(u).astype(np.int64)
    j1 = np.minimum(j0 + 1, src - 1)
    frac = u - j0
    w = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(w, (rows, j0), 1.0 - frac)
    np.add.at(w, (rows, j1), frac)
    return w


@functools.lru_cache(maxsize=64)
def axis_weights(src: int, dst: int) -> np.ndarray:
    """``(dst, src)`` resampling matrix for one axis (read-only, cached)."""
    if dst == src:
        w = np.eye(src)
    elif dst < src:
        w = _area_weights(src, dst)
    else:
        w = _bilinear_weights(src, dst)
    w.setflags(write=False)
    return w


def resize(img: Image, width: int, height: int) -> Image:
    """Resize to exactly ``width`` x ``height``; the aspect ratio is not preserved."""
    if width < 1 or height < 1:
        raise ImageError(f"target size must be positive, got {width}x{height}")
    if (width, height) == img.size:
        return img
    wy = axis_weights(img.height, height)
    wx = axis_weights(img.width, width)
    px = img.pixels.astype(np.float64)
    tmp = np.tensordot(wy, px, axes=(1, 0))  # (height, W, C)
    out = np.tensordot(tmp, wx, axes=(1, 1)).transpose(0, 2, 1)  # (height, width, C)
    return Image(np.clip(out, 0.0, 1.0).astype(np.float32))


def crop(img: Image, x0: int, y0: int, width: int, height: int) -> Image:
    """Exact pixel copy of the rectangle; refuses rectangles outside the image."""
    if width < 1 or height < 1:
        raise ImageError(f"crop size must be positive, got {width}x{height}")
    if x0 < 0 or y0 < 0 or x0 + width > img.width or y0 + height > img.height:
        raise ImageError(
            f"crop ({x0}, {y0}, {width}x{height}) outside {img.width}x{img.height} image"
        )
    return Image(img.pixels[y0:y0 + height, x0:x0 + width].copy())


# --- file I/O -----------------------------------------------------------------

PNM_EXTS = {".ppm", ".pgm", ".pnm"}


def _to_bytes(img: Image) -> np.ndarray:
    return np.round(img.pixels * 255.0).astype(np.uint8)


def _read_pnm(buf: bytes, path) -> Image:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise ImageError(f"truncated PNM header in {path}")
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte after maxval
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageError(f"{path}: unsupported PNM type {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageError(f"{path}: malformed PNM header") from exc
    if maxval != 255 or width < 1 or height < 1:
        raise ImageError(f"{path}: need maxval 255 and positive size")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    data = buf[pos:pos + need]
    if len(data) != need:
        raise ImageError(f"{path}: truncated pixel data ({len(data)} of {need} bytes)")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr.astype(np.float32) / 255.0)


def load_image(path) -> Image:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if path.suffix.lower() in PNM_EXTS:
        return _read_pnm(buf, path)
    from PIL import Image as PILImage

    try:
        with PILImage.open(io.BytesIO(buf)) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    return Image(arr.astype(np.float32) / 255.0)


def save_image(img: Image, path) -> None:
    """Write PPM (P6), PGM (P5) or PNG, chosen by extension."""
    path = Path(path)
    ext = path.suffix.lower()
    data = _to_bytes(img)
    if ext == ".ppm":
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        path.write_bytes(b"P6\n%d %d\n255\n" % (img.width, img.height) + data.tobytes())
    elif ext == ".pgm":
        if data.shape[2] != 1:
            raise ImageError("PGM output needs a single-channel image")
        path.write_bytes(b"P5\n%d %d\n255\n" % (img.width, img.height) + data.tobytes())
    elif ext == ".png":
        from PIL import Image as PILImage

        mode_data = data[:, :, 0] if data.shape[2] == 1 else data
        PILImage.fromarray(mode_data).save(path, format="PNG")
    else:
        raise ImageError(f"unsupported image extension {ext!r} for {path}")


def to_channels(img: Image, channels: int) -> Image:
    """Convert between gray and RGB (gray = channel mean)."""
    if img.channels == channels:
        return img
    if channels == 1:
        return Image(img.pixels.mean(axis=2, keepdims=True))
    return Image(np.repeat(img.pixels, 3, axis=2))
