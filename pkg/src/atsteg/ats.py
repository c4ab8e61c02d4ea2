"""Self-trained cover/stego classification.

The testing set A is re-embedded once to get B and again to get C. Originals
(A) and double-embedded copies (C) form a labeled training set whose boundary
separates "less embedded" from "more embedded"; classifying B against it and
reading results back through the positional A<->B bijection labels each a_i:
b_i carries exactly one embedding more than a_i, so if b_i lands on the A
side (at most one embedding) a_i is cover, and if b_i lands on the C side
(two embeddings or more) a_i is stego. No external
training data is involved, so the classifier cannot be mismatched to the
source of the testing images.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, MutableMapping, Sequence

import numpy as np

from .features import FeatureParams, extract_corpus
from .image_io import GrayImage
from .learner import (
    LearnerParams,
    PipelineFit,
    anova_f,
    apply_standardizer,
    decision_values,
    fit_pipeline,
    fit_standardizer,
    grid_search,
    select_top_k,
)
from .stego import EmbedConfig, apply_splitting

COVER = "cover"
STEGO = "stego"

# Predicted stego fractions outside this band flag an unreliable regime
# (heavily one-sided sets degrade the manufactured training boundary).
RELIABLE_FRACTION_BAND = (0.10, 0.95)


@dataclass
class Diagnostics:
    ac_cv_accuracy: float
    n: int
    predicted_stego_fraction: float
    warning: str | None = None


@dataclass
class PerImage:
    id: str
    label: str
    decision: float


@dataclass
class Counts:
    tp: int
    tn: int
    fp: int
    fn: int


@dataclass
class AtsReport:
    """Per-image labels plus diagnostics; counts/accuracy only with ground truth."""

    per_image: list[PerImage]
    diagnostics: Diagnostics
    counts: Counts | None = None
    accuracy: float | None = None

    def to_json_dict(self) -> dict:
        out: dict = {
            "per_image": [
                {"id": p.id, "label": p.label, "decision": p.decision}
                for p in self.per_image
            ],
            "diagnostics": {
                "ac_cv_accuracy": self.diagnostics.ac_cv_accuracy,
                "n": self.diagnostics.n,
                "predicted_stego_fraction": self.diagnostics.predicted_stego_fraction,
            },
        }
        if self.diagnostics.warning is not None:
            out["diagnostics"]["warning"] = self.diagnostics.warning
        if self.counts is not None:
            out["counts"] = {
                "tp": self.counts.tp,
                "tn": self.counts.tn,
                "fp": self.counts.fp,
                "fn": self.counts.fn,
            }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        return out

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    def csv_rows(self) -> list[list]:
        rows = [["id", "label", "decision"]]
        for p in self.per_image:
            rows.append([p.id, p.label, repr(p.decision)])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())


@dataclass
class PipelineDetails:
    """Everything an ats run produces, for stages that need the internals.

    Arrays are aligned with ``order`` (the canonical sorted-id ordering used
    internally), not with the caller's input order.
    """

    report: AtsReport
    order: list[str]
    features_a: np.ndarray
    features_b: np.ndarray
    predicted_stego: np.ndarray
    fit: PipelineFit


def verify_structure(
    a_ids: Sequence[str], b_ids: Sequence[str], c_ids: Sequence[str], y: np.ndarray
) -> None:
    """Check the structural invariants of one run; raise RuntimeError on violation.

    Same cardinality across the three sets, a positional bijection with fresh
    ids at each generation, training ids disjoint from the classified set,
    and a balanced training labeling.
    """
    n = len(a_ids)
    if not (len(b_ids) == n and len(c_ids) == n):
        raise RuntimeError("derived sets lost cardinality")
    if len(set(a_ids)) != n or len(set(b_ids)) != n or len(set(c_ids)) != n:
        raise RuntimeError("duplicate ids within a set")
    train_ids = set(a_ids) | set(c_ids)
    if train_ids & set(b_ids):
        raise RuntimeError("training ids overlap the classified set")
    if len(train_ids) != 2 * n:
        raise RuntimeError("original and double-embedded ids overlap")
    y = np.asarray(y)
    if y.shape[0] != 2 * n or int((y < 0).sum()) != n or int((y > 0).sum()) != n:
        raise RuntimeError("training labels are not balanced")


def _confusion(per_image: Sequence[PerImage], truth: Mapping[str, str]) -> Counts:
    truth_ids = set(truth)
    report_ids = {p.id for p in per_image}
    if truth_ids != report_ids:
        missing = sorted(report_ids - truth_ids)[:3]
        extra = sorted(truth_ids - report_ids)[:3]
        raise ValueError(
            f"truth/id mismatch: not in truth {missing}, not in input {extra}"
        )
    bad = [v for v in truth.values() if v not in (COVER, STEGO)]
    if bad:
        raise ValueError(f"truth labels must be '{COVER}' or '{STEGO}', got {bad[0]!r}")
    tp = tn = fp = fn = 0
    for p in per_image:
        actual = truth[p.id]
        if p.label == STEGO:
            if actual == STEGO:
                tp += 1
            else:
                fp += 1
        else:
            if actual == COVER:
                tn += 1
            else:
                fn += 1
    return Counts(tp=tp, tn=tn, fp=fp, fn=fn)


def ats_run(
    images: Sequence[GrayImage],
    split: EmbedConfig,
    feat_params: FeatureParams | None = None,
    learner_params: LearnerParams | None = None,
    truth: Mapping[str, str] | None = None,
    feature_cache: MutableMapping[str, np.ndarray] | None = None,
    workers: int = 1,
) -> PipelineDetails:
    """Run the full pipeline and return the report plus internals.

    Inputs are processed in a canonical sorted-id order so the result is
    identical under any permutation of ``images``; the report still lists
    entries in the caller's order.
    """
    if len(images) < 2:
        raise ValueError(f"need at least 2 images, got {len(images)}")
    input_ids = [img.id for img in images]
    if len(set(input_ids)) != len(input_ids):
        raise ValueError("duplicate image ids in input set")
    if feat_params is None:
        feat_params = FeatureParams()
    if learner_params is None:
        learner_params = LearnerParams()

    order = sorted(range(len(images)), key=lambda i: images[i].id)
    a_set = [images[i] for i in order]
    b_set = apply_splitting(a_set, split)
    c_set = apply_splitting(b_set, split)

    f_a = extract_corpus(a_set, feat_params, cache=feature_cache, workers=workers)
    f_b = extract_corpus(b_set, feat_params, cache=feature_cache, workers=workers)
    f_c = extract_corpus(c_set, feat_params, cache=feature_cache, workers=workers)

    n = len(a_set)
    X = np.vstack([f_a.X, f_c.X])
    y = np.concatenate([-np.ones(n), np.ones(n)])
    verify_structure(f_a.ids, f_b.ids, f_c.ids, y)

    fit = fit_pipeline(X, y, learner_params)
    dec = decision_values(fit.model, f_b.X)
    # b_i carries one embedding more than a_i. Landing on the double-embedded
    # side (positive decision) means a_i was already embedded: stego. Ties go
    # to the original side: cover.
    predicted_stego = dec > 0.0

    labels_sorted = [STEGO if s else COVER for s in predicted_stego]
    pos_of_input = np.empty(len(images), dtype=np.int64)
    pos_of_input[order] = np.arange(len(images))
    per_image = [
        PerImage(
            id=input_ids[i],
            label=labels_sorted[pos_of_input[i]],
            decision=float(dec[pos_of_input[i]]),
        )
        for i in range(len(images))
    ]

    fraction = float(predicted_stego.mean())
    lo, hi = RELIABLE_FRACTION_BAND
    warning = None
    if fraction < lo or fraction > hi:
        warning = (
            f"predicted stego fraction {fraction:.2f} is outside the reliable "
            f"operating band [{lo:.2f}, {hi:.2f}]; labels may be unreliable"
        )
    diagnostics = Diagnostics(
        ac_cv_accuracy=fit.grid.cv_accuracy,
        n=len(images),
        predicted_stego_fraction=fraction,
        warning=warning,
    )
    report = AtsReport(per_image=per_image, diagnostics=diagnostics)
    if truth is not None:
        report.counts = _confusion(per_image, truth)
        report.accuracy = (report.counts.tp + report.counts.tn) / len(images)
    return PipelineDetails(
        report=report,
        order=[img.id for img in a_set],
        features_a=f_a.X,
        features_b=f_b.X,
        predicted_stego=predicted_stego,
        fit=fit,
    )


def ats_classify(
    images: Sequence[GrayImage],
    split: EmbedConfig,
    feat_params: FeatureParams | None = None,
    learner_params: LearnerParams | None = None,
    truth: Mapping[str, str] | None = None,
    feature_cache: MutableMapping[str, np.ndarray] | None = None,
    workers: int = 1,
) -> AtsReport:
    """Label every input image cover or stego using only the inputs themselves."""
    return ats_run(
        images,
        split,
        feat_params=feat_params,
        learner_params=learner_params,
        truth=truth,
        feature_cache=feature_cache,
        workers=workers,
    ).report


def pair_cv_accuracy(
    X_first: np.ndarray, X_second: np.ndarray, learner_params: LearnerParams | None = None
) -> float:
    """Best cross-validated accuracy separating two feature sets.

    Around 0.5 means the sets are statistically indistinguishable; values
    near 1.0 mean the learner stack can tell them apart.
    """
    if learner_params is None:
        learner_params = LearnerParams()
    X_first = np.asarray(X_first, dtype=np.float64)
    X_second = np.asarray(X_second, dtype=np.float64)
    X = np.vstack([X_first, X_second])
    y = np.concatenate([-np.ones(len(X_first)), np.ones(len(X_second))])
    scores = anova_f(X, y)
    selected = select_top_k(scores, learner_params.top_k)
    mean, std = fit_standardizer(X[:, selected])
    Z = apply_standardizer(X[:, selected], mean, std)
    folds = min(learner_params.folds, len(X_first), len(X_second))
    if folds < 2:
        raise ValueError("each side needs at least two samples")
    grid = grid_search(
        Z,
        y,
        folds=folds,
        c_grid=learner_params.c_grid,
        gamma_grid=learner_params.gamma_grid,
        fold_seed=learner_params.fold_seed,
        tol=learner_params.smo_tol,
        max_iter=learner_params.max_iter,
    )
    return grid.cv_accuracy


def disjointness_probe(
    images: Sequence[GrayImage],
    split: EmbedConfig,
    feat_params: FeatureParams | None = None,
    learner_params: LearnerParams | None = None,
) -> dict[str, float]:
    """Cross-validated separability of each pair among the derived sets.

    For a cover-only input, original-vs-twice-embedded ("a_vs_c") should be
    near-perfectly separable while adjacent generations are harder; a flat
    profile near 0.5 means the split rate is too low to matter.
    """
    if len(images) < 4:
        raise ValueError(f"need at least 4 images, got {len(images)}")
    if feat_params is None:
        feat_params = FeatureParams()
    a_set = sorted(images, key=lambda img: img.id)
    b_set = apply_splitting(a_set, split)
    c_set = apply_splitting(b_set, split)
    f_a = extract_corpus(a_set, feat_params)
    f_b = extract_corpus(b_set, feat_params)
    f_c = extract_corpus(c_set, feat_params)
    return {
        "a_vs_b": pair_cv_accuracy(f_a.X, f_b.X, learner_params),
        "a_vs_c": pair_cv_accuracy(f_a.X, f_c.X, learner_params),
        "b_vs_c": pair_cv_accuracy(f_b.X, f_c.X, learner_params),
    }
