"""Keyed LSB-matching embedding.

The same primitive serves two roles: simulating a payload when building
labeled experiments, and re-embedding a testing set to manufacture training
material for the self-trained classifier. Embedding is fully deterministic
given (key, image id, generation), so derived sets can be reproduced
image by image.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .image_io import GrayImage

GENERATION_SEP = ":g"

SUPPORTED_ALGORITHMS = ("lsbm",)


@dataclass(frozen=True)
class EmbedConfig:
    """Embedding algorithm, payload rate in bits per pixel, and master key."""

    algorithm: str = "lsbm"
    rate: float = 0.25
    key: int = 0

    def __post_init__(self):
        if self.algorithm not in SUPPORTED_ALGORITHMS:
            raise ValueError(
                f"unknown embedding algorithm {self.algorithm!r}; "
                f"supported: {', '.join(SUPPORTED_ALGORITHMS)}"
            )
        if not 0.0 < self.rate <= 1.0:
            raise ValueError(f"rate must be in (0, 1], got {self.rate}")
        if not 0 <= self.key < 2**64:
            raise ValueError("key must be an unsigned 64-bit integer")


def next_generation_id(image_id: str) -> tuple[str, int]:
    """Append or bump the trailing generation tag: "x" -> "x:g1" -> "x:g2"."""
    base, sep, tail = image_id.rpartition(GENERATION_SEP)
    if sep and tail.isdigit():
        generation = int(tail) + 1
        return f"{base}{GENERATION_SEP}{generation}", generation
    return f"{image_id}{GENERATION_SEP}1", 1


def base_id(image_id: str) -> str:
    """Strip a trailing generation tag, if any."""
    base, sep, tail = image_id.rpartition(GENERATION_SEP)
    if sep and tail.isdigit():
        return base
    return image_id


def derive_rng(key: int, image_id: str, generation: int) -> np.random.Generator:
    """Per-image, per-generation generator from the master key.

    Hashing (key, id, generation) keeps embeddings independent across images
    and across repeated applications to the same image.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(key.to_bytes(8, "little"))
    h.update(image_id.encode("utf-8"))
    h.update(b"\x00")
    h.update(generation.to_bytes(4, "little"))
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


def derive_seed(key: int, *context) -> int:
    """Derive an independent 128-bit seed from a key and context labels."""
    h = hashlib.blake2b(digest_size=16)
    h.update(key.to_bytes(8, "little"))
    for part in context:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def _lsbm_embed_pixels(
    pixels: np.ndarray, rate: float, rng: np.random.Generator
) -> np.ndarray:
    n = pixels.size
    m = math.ceil(rate * n)
    flat = pixels.reshape(-1).astype(np.int16)
    sites = rng.permutation(n)[:m]
    bits = rng.integers(0, 2, size=m, dtype=np.int16)
    direction = (rng.integers(0, 2, size=m, dtype=np.int16) * 2 - 1).astype(np.int16)
    values = flat[sites]
    direction[values == 0] = 1
    direction[values == 255] = -1
    mismatch = (values & 1) != bits
    flat[sites] = np.where(mismatch, values + direction, values)
    return flat.astype(np.uint8).reshape(pixels.shape)


_EMBEDDERS = {"lsbm": _lsbm_embed_pixels}


def lsbm_embed(img: GrayImage, cfg: EmbedConfig) -> GrayImage:
    """Embed a pseudorandom message by +-1 matching.

    ceil(rate * n) pixel sites are chosen by a keyed permutation; wherever the
    pixel's least significant bit already equals the message bit the pixel is
    left alone, otherwise it moves +-1 (direction uniform, forced inward at
    the 0/255 saturation points). The output id carries a bumped generation
    tag.
    """
    out_id, generation = next_generation_id(img.id)
    rng = derive_rng(cfg.key, img.id, generation)
    embed = _EMBEDDERS[cfg.algorithm]
    pixels = embed(img.pixels, cfg.rate, rng)
    return GrayImage(width=img.width, height=img.height, pixels=pixels, id=out_id)


def apply_splitting(images: Sequence[GrayImage], cfg: EmbedConfig) -> list[GrayImage]:
    """Embed every image in a set, preserving order (a positional bijection)."""
    ids = [img.id for img in images]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in input set")
    return [lsbm_embed(img, cfg) for img in images]


def change_rate(a: GrayImage, b: GrayImage) -> float:
    """Fraction of pixel positions that differ between two equally sized images."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    return float(np.count_nonzero(a.pixels != b.pixels)) / (a.width * a.height)
