"""Grayscale image handling: PGM/PNG loading, center clipping, synthetic covers.

Everything downstream operates on 8-bit grayscale rasters. Binary PGM (P5,
maxval 255) is supported for both reading and writing; 8-bit PNG (grayscale
or RGB) is read-only, with RGB collapsed to luma.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# BT.601 luma weights for RGB -> gray collapse.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_SUPPORTED_SUFFIXES = (".pgm", ".png")


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported, or degenerate image files."""


@dataclass(frozen=True)
class GrayImage:
    """An 8-bit grayscale raster with a stable identifier.

    The pixel buffer is marked read-only on construction; derive new images
    instead of mutating in place.
    """

    width: int
    height: int
    pixels: np.ndarray
    id: str

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ImageFormatError("zero-area image")
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixel buffer shape {px.shape} does not match "
                f"height x width ({self.height}, {self.width})"
            )
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, pixels: np.ndarray, image_id: str) -> "GrayImage":
        px = np.asarray(pixels)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {px.shape}")
        return cls(width=px.shape[1], height=px.shape[0], pixels=px, id=image_id)

    def with_id(self, image_id: str) -> "GrayImage":
        return GrayImage(self.width, self.height, self.pixels, image_id)


def _tokenize_pgm_header(data: bytes, name: str):
    """Yield whitespace/comment-delimited header tokens and the final offset."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos] != 0x23:
            pos += 1
        if pos == start:
            raise ImageFormatError(f"unreadable file: {name} (truncated header)")
        tokens.append(data[start:pos])
    # Exactly one whitespace byte separates the header from the raster.
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError(f"unreadable file: {name} (missing raster separator)")
    return tokens, pos + 1


def _parse_pgm(data: bytes, name: str) -> GrayImage:
    tokens, raster_start = _tokenize_pgm_header(data, name)
    if tokens[0] != b"P5":
        raise ImageFormatError(f"unsupported format: {name} (expected binary PGM magic P5)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"unreadable file: {name} (non-numeric header field)") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"zero-area image: {name}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported bit depth: {name} (maxval {maxval}, need 255)")
    raster = data[raster_start : raster_start + width * height]
    if len(raster) < width * height:
        raise ImageFormatError(f"unreadable file: {name} (raster truncated)")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(width=width, height=height, pixels=pixels.copy(), id=name)


def _load_png(data: bytes, name: str) -> GrayImage:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                pixels = np.asarray(im, dtype=np.uint8)
            elif mode == "RGB":
                rgb = np.asarray(im, dtype=np.float64)
                pixels = np.clip(np.rint(rgb @ _LUMA_WEIGHTS), 0, 255).astype(np.uint8)
            else:
                raise ImageFormatError(
                    f"unsupported format: {name} (PNG mode {mode}; need 8-bit gray or RGB)"
                )
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"unreadable file: {name} ({exc})") from None
    if pixels.size == 0:
        raise ImageFormatError(f"zero-area image: {name}")
    return GrayImage.from_array(pixels, name)


def load_image(path) -> GrayImage:
    """Load a PGM or PNG file, dispatching on magic bytes. Id is the file stem."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"unreadable file: {path} ({exc})") from None
    name = path.stem
    if data[:2] == b"P5":
        return _parse_pgm(data, name)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(data, name)
    raise ImageFormatError(f"unsupported format: {path} (not binary PGM or PNG)")


def save_pgm(img: GrayImage, path) -> None:
    """Write a binary PGM (P5, maxval 255)."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def load_corpus(directory, suffixes=_SUPPORTED_SUFFIXES) -> list[GrayImage]:
    """Load every supported image under a directory, sorted by filename.

    Ids are file stems and must be unique across the directory.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageFormatError(f"not a directory: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in suffixes)
    images = [load_image(p) for p in paths]
    seen: dict[str, str] = {}
    for img, p in zip(images, paths):
        if img.id in seen:
            raise ImageFormatError(f"duplicate image id {img.id!r}: {seen[img.id]} and {p.name}")
        seen[img.id] = p.name
    return images


def clip_center(img: GrayImage, width: int, height: int) -> GrayImage:
    """Extract the centered width x height window (offsets floor((W-w)/2), floor((H-h)/2))."""
    if width <= 0 or height <= 0:
        raise ImageFormatError("zero-area image")
    if width > img.width or height > img.height:
        raise ValueError(
            f"requested clip {width}x{height} exceeds source {img.width}x{img.height}"
        )
    x0 = (img.width - width) // 2
    y0 = (img.height - height) // 2
    window = img.pixels[y0 : y0 + height, x0 : x0 + width]
    return GrayImage(width=width, height=height, pixels=window.copy(), id=img.id)


def _box_filter(field: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur via windowed cumulative sums."""
    size = 2 * radius + 1
    out = field
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        mode = "reflect" if out.shape[axis] > radius else "edge"
        padded = np.pad(out, pad, mode=mode)
        csum = np.cumsum(padded, axis=axis, dtype=np.float64)
        lead_shape = list(csum.shape)
        lead_shape[axis] = 1
        csum = np.concatenate([np.zeros(lead_shape), csum], axis=axis)
        if axis == 0:
            out = (csum[size:, :] - csum[:-size, :]) / size
        else:
            out = (csum[:, size:] - csum[:, :-size]) / size
    return out


def synth_cover(seed: int, width: int, height: int, smoothness: float = 0.0) -> GrayImage:
    """Generate a deterministic synthetic cover image.

    A uniform random field on [0, 1) is optionally smoothed by a box filter
    of radius ceil(smoothness), then rescaled to the 8-bit range. The rescale
    is a fixed factor, not a per-image contrast stretch, so smoothing
    genuinely concentrates neighboring differences: smoothness 0 keeps the
    pixel histogram uniform, while larger values tighten the local texture
    until a +-1 perturbation becomes statistically visible.
    """
    if smoothness < 0:
        raise ValueError(f"smoothness must be >= 0, got {smoothness}")
    if width <= 0 or height <= 0:
        raise ImageFormatError("zero-area image")
    rng = np.random.default_rng(seed)
    field = rng.random((height, width))
    radius = math.ceil(smoothness)
    if radius > 0:
        field = _box_filter(field, radius)
    pixels = np.minimum((field * 256.0).astype(np.int64), 255).astype(np.uint8)
    image_id = f"synth-{seed}-{width}x{height}-s{smoothness:g}"
    return GrayImage(width=width, height=height, pixels=pixels, id=image_id)
