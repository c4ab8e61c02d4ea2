"""Payload-rate estimation and one-image-at-a-time streaming classification.

Rate search: run the self-trained classifier once per tentative rate and
score the induced partition by centroid geometry. When the tentative rate
matches the true one, the freshly embedded copies of the predicted covers
land on top of the predicted-stego centroid, so the score dips at the true
rate.

Streaming: images arrive one by one; once enough have accumulated the whole
current set is re-classified each round, and per-image confidence is the
fraction of classification rounds that agree with the latest label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, MutableMapping, Sequence

import numpy as np

from .ats import AtsReport, PipelineDetails, ats_run
from .features import FeatureParams
from .image_io import GrayImage
from .learner import LearnerParams, select_top_k
from .stego import EmbedConfig

CENTROID_FEATURES = 50


class DegeneratePartitionError(ValueError):
    """A centroid score is undefined: a predicted class is empty or collapsed."""


def centroid(vectors: np.ndarray) -> np.ndarray:
    """Mean row of a non-empty set of feature vectors."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape[0] == 0:
        raise DegeneratePartitionError("centroid of an empty set")
    return vectors.mean(axis=0)


def score_s(
    a_cover_centroid: np.ndarray,
    a_stego_centroid: np.ndarray,
    b_stego_centroid: np.ndarray,
) -> float:
    """Distance ratio d(A-stego, B-stego) / d(A-cover, A-stego).

    Near zero when the copies embedded at the tentative rate coincide with
    the predicted-stego cluster, i.e. when the tentative rate is right.
    """
    a_cover_centroid = np.asarray(a_cover_centroid, dtype=np.float64)
    a_stego_centroid = np.asarray(a_stego_centroid, dtype=np.float64)
    b_stego_centroid = np.asarray(b_stego_centroid, dtype=np.float64)
    denom = float(np.linalg.norm(a_cover_centroid - a_stego_centroid))
    if denom == 0.0:
        raise DegeneratePartitionError("cover and stego centroids coincide")
    num = float(np.linalg.norm(a_stego_centroid - b_stego_centroid))
    return num / denom


def _partition_score(details: PipelineDetails, n_centroid_features: int) -> float:
    """Score one run's partition in the standardized selected-feature space."""
    predicted_stego = details.predicted_stego
    n_stego = int(predicted_stego.sum())
    n_cover = predicted_stego.size - n_stego
    if n_stego == 0 or n_cover == 0:
        raise DegeneratePartitionError(
            f"one-sided partition: {n_cover} cover / {n_stego} stego"
        )
    model = details.fit.model
    k = min(n_centroid_features, model.selected_indices.size)
    top = select_top_k(details.fit.anova_scores, k)
    # The top block is nested inside the model's selection, so the training
    # standardizer covers every centroid feature.
    positions = np.searchsorted(model.selected_indices, top)
    mean = model.feature_mean[positions]
    std = model.feature_std[positions]

    def standardized(rows: np.ndarray) -> np.ndarray:
        return (rows[:, top] - mean) / std

    a_cover = centroid(standardized(details.features_a[~predicted_stego]))
    a_stego = centroid(standardized(details.features_a[predicted_stego]))
    # The stego part of B is the copies of the predicted covers: those carry
    # exactly one embedding at the tentative rate.
    b_stego = centroid(standardized(details.features_b[~predicted_stego]))
    return score_s(a_cover, a_stego, b_stego)


@dataclass
class ScoreEntry:
    tentative_rate: float
    score: float
    report: AtsReport


def search_bitrate(
    images: Sequence[GrayImage],
    algorithm: str,
    candidates: Sequence[float],
    key: int = 0,
    feat_params: FeatureParams | None = None,
    learner_params: LearnerParams | None = None,
    n_centroid_features: int = CENTROID_FEATURES,
) -> list[ScoreEntry]:
    """Score every candidate rate; entries sorted by (score, rate), best first.

    Degenerate partitions score +inf rather than aborting the sweep. The
    entry at the true rate reproduces a direct classification run with the
    same key bit for bit.
    """
    if not candidates:
        raise ValueError("no candidate rates given")
    rates = sorted(set(float(r) for r in candidates))
    entries = []
    for rate in rates:
        split = EmbedConfig(algorithm=algorithm, rate=rate, key=key)
        details = ats_run(images, split, feat_params=feat_params, learner_params=learner_params)
        try:
            score = _partition_score(details, n_centroid_features)
        except DegeneratePartitionError:
            score = float("inf")
        entries.append(ScoreEntry(tentative_rate=rate, score=score, report=details.report))
    if all(np.isinf(e.score) for e in entries):
        raise DegeneratePartitionError("every candidate rate produced a degenerate partition")
    entries.sort(key=lambda e: (e.score, e.tentative_rate))
    return entries


@dataclass
class StreamState:
    """Accumulating testing set with per-image label history.

    ``classifier`` exists for instrumentation: it replaces the real pipeline
    with any callable mapping an image list to an :class:`AtsReport`.
    """

    split: EmbedConfig
    n_min: int = 10
    batch_every: int = 1
    feat_params: FeatureParams = field(default_factory=FeatureParams)
    learner_params: LearnerParams = field(default_factory=LearnerParams)
    classifier: Callable[[Sequence[GrayImage]], AtsReport] | None = None
    images: list[GrayImage] = field(default_factory=list)
    history: dict[str, list[str]] = field(default_factory=dict)
    rounds: int = 0
    last_report: AtsReport | None = None
    feature_cache: MutableMapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_min < 2:
            raise ValueError(f"n_min must be >= 2, got {self.n_min}")
        if self.batch_every < 1:
            raise ValueError(f"batch_every must be >= 1, got {self.batch_every}")


def stream_add(state: StreamState, img: GrayImage) -> dict[str, str] | None:
    """Add one image; classify the whole accumulated set when due.

    Nothing is classified until ``n_min`` images have arrived; after that a
    round runs every ``batch_every`` arrivals. Returns the labels of the
    round that ran, else None.
    """
    if any(existing.id == img.id for existing in state.images):
        raise ValueError(f"duplicate image id {img.id!r} in stream")
    state.images.append(img)
    n = len(state.images)
    if n < state.n_min or (n - state.n_min) % state.batch_every != 0:
        return None
    if state.classifier is not None:
        report = state.classifier(list(state.images))
    else:
        report = ats_run(
            state.images,
            state.split,
            feat_params=state.feat_params,
            learner_params=state.learner_params,
            feature_cache=state.feature_cache,
        ).report
    state.rounds += 1
    state.last_report = report
    labels = {p.id: p.label for p in report.per_image}
    for image_id, label in labels.items():
        state.history.setdefault(image_id, []).append(label)
    return labels


def rounds_seen(state: StreamState, image_id: str) -> int:
    """Number of classification rounds an image has participated in."""
    return len(state.history.get(image_id, ()))


def confidence(state: StreamState, image_id: str) -> float:
    """Fraction of an image's rounds that agree with its latest label.

    The latest round agrees with itself, so the value lies in (0, 1] and a
    first-ever classification starts at exactly 1.
    """
    history = state.history.get(image_id)
    if not history:
        raise ValueError(f"image {image_id!r} has never been classified")
    latest = history[-1]
    return history.count(latest) / len(history)
