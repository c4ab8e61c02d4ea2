"""Markov transition features of truncated pixel differences.

Differences I(p+s) - I(p) are taken along the eight neighbor directions,
truncated to [-T, T], and summarized by empirical transition probabilities of
chains of length order+1 along each direction. The four axis directions are
averaged into one block and the four diagonals into a second, giving
2 * (2T+1)^(order+1) features; the defaults T=3, order=2 yield 686.

The +-1 embedding perturbs neighboring-difference statistics, so these
features separate originals from re-embedded copies even when absolute
intensities carry no signal.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import MutableMapping, Sequence

import numpy as np

from .image_io import GrayImage

AXIS_STEPS = ((0, 1), (0, -1), (1, 0), (-1, 0))
DIAGONAL_STEPS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class FeatureParams:
    """Truncation threshold and chain order for the transition features."""

    truncation: int = 3
    order: int = 2

    def __post_init__(self):
        if self.truncation < 1:
            raise ValueError(f"truncation must be >= 1, got {self.truncation}")
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")

    @property
    def dim(self) -> int:
        return 2 * (2 * self.truncation + 1) ** (self.order + 1)


def _offset_slices(d: int) -> tuple[slice, slice]:
    """(base, shifted) slices selecting aligned positions p and p+d along one axis."""
    if d > 0:
        return slice(None, -d), slice(d, None)
    if d < 0:
        return slice(-d, None), slice(None, d)
    return slice(None), slice(None)


def _chain_views(diffs: np.ndarray, step: tuple[int, int], length: int) -> list[np.ndarray]:
    """Views of the difference array at positions p, p+s, ..., p+(length-1)s."""
    dr, dc = step
    rows, cols = diffs.shape
    n_rows = rows - abs(dr) * (length - 1)
    n_cols = cols - abs(dc) * (length - 1)
    lo_r = max(0, -dr * (length - 1))
    lo_c = max(0, -dc * (length - 1))
    views = []
    for k in range(length):
        r0 = lo_r + k * dr
        c0 = lo_c + k * dc
        views.append(diffs[r0 : r0 + n_rows, c0 : c0 + n_cols])
    return views


def direction_transitions(
    pixels: np.ndarray, step: tuple[int, int], truncation: int, order: int
) -> np.ndarray:
    """Transition probability tensor for one direction.

    Returns shape (2T+1,) * (order+1); entry [u, ..., w] is the empirical
    probability of final difference w given the preceding context (u, ...),
    with indices shifted by +T. Contexts that never occur contribute zeros.
    """
    width = 2 * truncation + 1
    px = np.asarray(pixels, dtype=np.int16)
    base_r, shift_r = _offset_slices(step[0])
    base_c, shift_c = _offset_slices(step[1])
    diffs = px[shift_r, shift_c] - px[base_r, base_c]
    np.clip(diffs, -truncation, truncation, out=diffs)
    diffs += truncation
    chain = _chain_views(diffs, step, order + 1)
    flat_index = chain[0].astype(np.int32)
    for view in chain[1:]:
        flat_index = flat_index * width + view
    counts = np.bincount(flat_index.ravel(), minlength=width ** (order + 1))
    counts = counts.reshape((width,) * (order + 1)).astype(np.float64)
    context_totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(context_totals > 0, counts / context_totals, 0.0)
    return probs


def extract_spam(img: GrayImage, truncation: int = 3, order: int = 2) -> np.ndarray:
    """Extract the averaged transition feature vector for one image."""
    params = FeatureParams(truncation=truncation, order=order)
    min_extent = order + 2
    if img.width < min_extent or img.height < min_extent:
        raise ValueError(
            f"image too small for order {order}: need at least "
            f"{min_extent}x{min_extent}, got {img.width}x{img.height}"
        )
    axis_block = sum(
        direction_transitions(img.pixels, step, truncation, order) for step in AXIS_STEPS
    ) / len(AXIS_STEPS)
    diag_block = sum(
        direction_transitions(img.pixels, step, truncation, order)
        for step in DIAGONAL_STEPS
    ) / len(DIAGONAL_STEPS)
    vec = np.concatenate([axis_block.ravel(), diag_block.ravel()])
    assert vec.shape == (params.dim,)
    return vec


@dataclass
class FeatureMatrix:
    """Feature rows aligned with an id list (and optional labels)."""

    ids: list[str]
    X: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.X.shape}")
        if len(self.ids) != self.X.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids but {self.X.shape[0]} feature rows"
            )
        if self.labels is not None and len(self.labels) != len(self.ids):
            raise ValueError("labels length does not match ids")

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _extract_one(args):
    img, truncation, order = args
    return extract_spam(img, truncation, order)


def extract_corpus(
    images: Sequence[GrayImage],
    params: FeatureParams | None = None,
    cache: MutableMapping[str, np.ndarray] | None = None,
    workers: int = 1,
) -> FeatureMatrix:
    """Extract features for a whole set, preserving order.

    ``cache`` maps image id to feature vector and is filled in on misses; it
    is only valid for a single ``params`` setting. ``workers`` > 1 fans the
    cache misses out over processes; results do not depend on the worker
    count.
    """
    if params is None:
        params = FeatureParams()
    ids = [img.id for img in images]
    rows: list[np.ndarray | None] = [None] * len(images)
    missing: list[int] = []
    for i, img in enumerate(images):
        if cache is not None and img.id in cache:
            rows[i] = cache[img.id]
        else:
            missing.append(i)

    def compute(img: GrayImage) -> np.ndarray:
        try:
            return extract_spam(img, params.truncation, params.order)
        except ValueError as exc:
            raise ValueError(f"feature extraction failed for {img.id!r}: {exc}") from exc

    if workers > 1 and len(missing) > 1:
        jobs = [(images[i], params.truncation, params.order) for i in missing]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            try:
                results = list(pool.map(_extract_one, jobs, chunksize=8))
            except ValueError as exc:
                raise ValueError(f"feature extraction failed: {exc}") from exc
        for i, vec in zip(missing, results):
            rows[i] = vec
    else:
        for i in missing:
            rows[i] = compute(images[i])
    if cache is not None:
        for i in missing:
            cache[ids[i]] = rows[i]
    if rows:
        X = np.vstack(rows)
    else:
        X = np.zeros((0, params.dim))
    return FeatureMatrix(ids=ids, X=X)


def write_features_csv(matrix: FeatureMatrix, path) -> None:
    """Write one row per image: image_id,f0,...,f{D-1} with full float precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id"] + [f"f{i}" for i in range(matrix.dim)])
        for image_id, row in zip(matrix.ids, matrix.X):
            writer.writerow([image_id] + [repr(float(v)) for v in row])


def read_features_csv(path) -> FeatureMatrix:
    """Read a feature CSV produced by :func:`write_features_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"empty feature file: {path}") from None
        if not header or header[0] != "image_id":
            raise ValueError(f"malformed feature header in {path}")
        dim = len(header) - 1
        ids = []
        rows = []
        for record in reader:
            if not record:
                continue
            if len(record) != dim + 1:
                raise ValueError(
                    f"row for {record[0]!r} has {len(record) - 1} values, expected {dim}"
                )
            ids.append(record[0])
            rows.append([float(v) for v in record[1:]])
    X = np.array(rows, dtype=np.float64) if rows else np.zeros((0, dim))
    return FeatureMatrix(ids=ids, X=X)
