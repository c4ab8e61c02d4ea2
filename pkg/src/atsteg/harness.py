"""Experiment drivers: seeded corpora, repeat-averaged confusion tables,
cover/stego ratio sweeps, and streaming accuracy curves.

A spec file (TOML or JSON) pins every input: the corpus source (a directory
or synthetic generator groups), how many covers and stegos to draw, the
ground-truth embedding, the splitting configuration of the classifier, and
the repeat/seed structure. Identical specs produce identical numbers.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ats import COVER, STEGO, AtsReport, ats_classify
from .features import FeatureParams
from .image_io import GrayImage, clip_center, load_corpus, synth_cover
from .learner import LearnerParams
from .quantify import StreamState, confidence, stream_add
from .stego import EmbedConfig, base_id, derive_seed, lsbm_embed


@dataclass(frozen=True)
class SyntheticGroup:
    """One block of generated covers sharing size and texture."""

    count: int
    width: int
    height: int
    smoothness: float = 0.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"group count must be >= 1, got {self.count}")


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce an experiment."""

    embed: EmbedConfig
    split: EmbedConfig
    n_cover: int
    n_stego: int
    corpus_dir: str | None = None
    synthetic: tuple[SyntheticGroup, ...] = ()
    repeats: int = 1
    seed: int = 0
    clip: tuple[int, int] | None = None
    feat_params: FeatureParams = field(default_factory=FeatureParams)
    learner_params: LearnerParams = field(default_factory=LearnerParams)
    n_min: int = 10
    batch_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.n_cover < 0 or self.n_stego < 0:
            raise ValueError("cover and stego counts must be non-negative")
        if self.n_cover + self.n_stego < 2:
            raise ValueError("need at least 2 images per repeat")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if (self.corpus_dir is None) == (not self.synthetic):
            raise ValueError("specify exactly one of corpus_dir or synthetic groups")
        if self.embed.key == self.split.key:
            raise ValueError(
                "ground-truth embed key equals the splitting key; use disjoint keys"
            )


def _embed_config_from(d: dict, what: str) -> EmbedConfig:
    try:
        return EmbedConfig(
            algorithm=d.get("algorithm", "lsbm"),
            rate=float(d["rate"]),
            key=int(d.get("key", 0)),
        )
    except KeyError as exc:
        raise ValueError(f"{what} section is missing {exc.args[0]!r}") from None


def load_spec(path) -> ExperimentSpec:
    """Parse a TOML (.toml) or JSON (.json) experiment spec."""
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    elif path.suffix == ".json":
        raw = json.loads(path.read_text())
    else:
        raise ValueError(f"unsupported spec format: {path} (need .toml or .json)")
    if "embed" not in raw or "split" not in raw:
        raise ValueError("spec needs [embed] and [split] sections")
    groups = tuple(
        SyntheticGroup(
            count=int(g["count"]),
            width=int(g["width"]),
            height=int(g["height"]),
            smoothness=float(g.get("smoothness", 0.0)),
        )
        for g in raw.get("synthetic", [])
    )
    feats = raw.get("features", {})
    learner = raw.get("learner", {})
    stream = raw.get("stream", {})
    learner_params = LearnerParams(
        top_k=int(learner.get("top_k", 500)),
        folds=int(learner.get("folds", 5)),
        fold_seed=int(learner.get("fold_seed", 0)),
        max_iter=int(learner.get("max_iter", 20_000)),
    )
    if "c_grid" in learner:
        learner_params.c_grid = tuple(float(c) for c in learner["c_grid"])
    if "gamma_grid" in learner:
        learner_params.gamma_grid = tuple(float(g) for g in learner["gamma_grid"])
    clip = raw.get("clip")
    return ExperimentSpec(
        embed=_embed_config_from(raw["embed"], "embed"),
        split=_embed_config_from(raw["split"], "split"),
        n_cover=int(raw.get("n_cover", 0)),
        n_stego=int(raw.get("n_stego", 0)),
        corpus_dir=raw.get("corpus_dir"),
        synthetic=groups,
        repeats=int(raw.get("repeats", 1)),
        seed=int(raw.get("seed", 0)),
        clip=(int(clip[0]), int(clip[1])) if clip else None,
        feat_params=FeatureParams(
            truncation=int(feats.get("truncation", 3)),
            order=int(feats.get("order", 2)),
        ),
        learner_params=learner_params,
        n_min=int(stream.get("n_min", 10)),
        batch_every=int(stream.get("batch_every", 1)),
        workers=int(raw.get("workers", 1)),
    )


def build_corpus(spec: ExperimentSpec) -> list[GrayImage]:
    """Materialize the cover pool: loaded from disk or generated per group."""
    if spec.corpus_dir is not None:
        pool = load_corpus(spec.corpus_dir)
    else:
        pool = []
        for gi, group in enumerate(spec.synthetic):
            for k in range(group.count):
                img = synth_cover(
                    derive_seed(spec.seed, "corpus", gi, k) % 2**63,
                    group.width,
                    group.height,
                    group.smoothness,
                )
                pool.append(img.with_id(f"cover-{gi}-{k:04d}"))
    if spec.clip is not None:
        w, h = spec.clip
        pool = [clip_center(img, w, h) for img in pool]
    total = spec.n_cover + spec.n_stego
    if len(pool) < total:
        raise ValueError(
            f"corpus has {len(pool)} images but the spec draws {total} per repeat"
        )
    return pool


def _draw_testing_set(
    spec: ExperimentSpec, pool: Sequence[GrayImage], repeat: int
) -> tuple[list[GrayImage], dict[str, str]]:
    """One repeat's testing set and ground truth.

    Stego images keep their pool id (the cover original is excluded from the
    draw, so there is no collision) and are embedded with a per-repeat key so
    repeats see fresh payloads.
    """
    rng = np.random.default_rng(derive_seed(spec.seed, "draw", repeat))
    total = spec.n_cover + spec.n_stego
    picked = rng.choice(len(pool), size=total, replace=False)
    stego_sources = [pool[i] for i in picked[: spec.n_stego]]
    covers = [pool[i] for i in picked[spec.n_stego :]]
    embed_cfg = replace(spec.embed, key=derive_seed(spec.embed.key, "repeat", repeat) % 2**64)
    stegos = [
        lsbm_embed(img, embed_cfg).with_id(base_id(img.id)) for img in stego_sources
    ]
    testing = covers + stegos
    truth = {img.id: COVER for img in covers}
    truth.update({img.id: STEGO for img in stegos})
    return testing, truth


@dataclass
class ExperimentResult:
    """Repeat-averaged confusion numbers plus the individual reports."""

    accuracy: float
    tp: float
    tn: float
    fp: float
    fn: float
    repeats: int
    n_cover: int
    n_stego: int
    reports: list[AtsReport]
    warning: str | None = None


def run_experiment(spec: ExperimentSpec, pool: Sequence[GrayImage] | None = None) -> ExperimentResult:
    """Draw, embed, classify, and average over the spec's repeats."""
    if pool is None:
        pool = build_corpus(spec)
    reports = []
    for r in range(spec.repeats):
        testing, truth = _draw_testing_set(spec, pool, r)
        report = ats_classify(
            testing,
            spec.split,
            feat_params=spec.feat_params,
            learner_params=spec.learner_params,
            truth=truth,
            workers=spec.workers,
        )
        reports.append(report)
    warning = None
    if spec.n_stego == 0:
        warning = "all-cover regime: the testing set contains no stego images"
    elif spec.n_cover == 0:
        warning = "all-stego regime: the testing set contains no cover images"
    return ExperimentResult(
        accuracy=float(np.mean([rep.accuracy for rep in reports])),
        tp=float(np.mean([rep.counts.tp for rep in reports])),
        tn=float(np.mean([rep.counts.tn for rep in reports])),
        fp=float(np.mean([rep.counts.fp for rep in reports])),
        fn=float(np.mean([rep.counts.fn for rep in reports])),
        repeats=spec.repeats,
        n_cover=spec.n_cover,
        n_stego=spec.n_stego,
        reports=reports,
        warning=warning,
    )


def ratio_sweep(spec: ExperimentSpec, step: int) -> list[ExperimentResult]:
    """Re-run the experiment at every cover/stego split of the same total.

    Rows go from all-cover to all-stego in ``step``-sized moves; the step
    must divide the total.
    """
    total = spec.n_cover + spec.n_stego
    if step < 1 or total % step != 0:
        raise ValueError(f"step {step} does not divide the total {total}")
    pool = build_corpus(spec)
    results = []
    for n_stego in range(0, total + 1, step):
        sub = replace(spec, n_cover=total - n_stego, n_stego=n_stego)
        results.append(run_experiment(sub, pool=pool))
    return results


@dataclass
class StreamRound:
    """One classification round of a streaming run."""

    round: int
    n: int
    accuracy: float
    mean_confidence: float


def stream_experiment(spec: ExperimentSpec, order_seed: int = 0) -> list[StreamRound]:
    """Feed one drawn testing set through the streaming classifier.

    Per round, accuracy compares latest labels with ground truth over the
    images seen so far and confidence is averaged over the same set.
    """
    pool = build_corpus(spec)
    testing, truth = _draw_testing_set(spec, pool, 0)
    order = np.random.default_rng(derive_seed(spec.seed, "order", order_seed)).permutation(
        len(testing)
    )
    state = StreamState(
        split=spec.split,
        n_min=spec.n_min,
        batch_every=spec.batch_every,
        feat_params=spec.feat_params,
        learner_params=spec.learner_params,
    )
    rounds = []
    for pos in order:
        labels = stream_add(state, testing[pos])
        if labels is None:
            continue
        correct = sum(1 for image_id, label in labels.items() if truth[image_id] == label)
        mean_conf = float(np.mean([confidence(state, image_id) for image_id in labels]))
        rounds.append(
            StreamRound(
                round=state.rounds,
                n=len(labels),
                accuracy=correct / len(labels),
                mean_confidence=mean_conf,
            )
        )
    return rounds


def stream_experiment_average(
    spec: ExperimentSpec, order_seeds: Sequence[int]
) -> list[StreamRound]:
    """Average streaming curves over several arrival orders.

    Every order visits the same drawn set, so the round grid lines up and
    rows can be averaged pointwise.
    """
    if not order_seeds:
        raise ValueError("need at least one order seed")
    curves = [stream_experiment(spec, order_seed=s) for s in order_seeds]
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise RuntimeError("streaming curves have mismatched round grids")
    out = []
    for rows in zip(*curves):
        out.append(
            StreamRound(
                round=rows[0].round,
                n=rows[0].n,
                accuracy=float(np.mean([r.accuracy for r in rows])),
                mean_confidence=float(np.mean([r.mean_confidence for r in rows])),
            )
        )
    return out


def _metadata_lines(spec: ExperimentSpec) -> list[str]:
    source = spec.corpus_dir if spec.corpus_dir else (
        "synthetic:" + ",".join(
            f"{g.count}x{g.width}x{g.height}s{g.smoothness:g}" for g in spec.synthetic
        )
    )
    return [
        f"# seed = {spec.seed}",
        f"# corpus = {source}",
        f"# embed = {spec.embed.algorithm} rate={spec.embed.rate:g}",
        f"# split = {spec.split.algorithm} rate={spec.split.rate:g}",
        f"# repeats = {spec.repeats}",
    ]


def write_experiment_csv(results: Sequence[ExperimentResult], spec: ExperimentSpec, path) -> None:
    """Result rows with Acc/TP/TN/FP/FN columns under a commented metadata header."""
    with open(path, "w", newline="") as fh:
        for line in _metadata_lines(spec):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["n_cover", "n_stego", "Acc", "TP", "TN", "FP", "FN"])
        for res in results:
            writer.writerow(
                [res.n_cover, res.n_stego, f"{res.accuracy:.6f}",
                 f"{res.tp:.3f}", f"{res.tn:.3f}", f"{res.fp:.3f}", f"{res.fn:.3f}"]
            )


def write_stream_csv(rounds: Sequence[StreamRound], spec: ExperimentSpec, path) -> None:
    with open(path, "w", newline="") as fh:
        for line in _metadata_lines(spec):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["round", "n", "accuracy", "mean_confidence"])
        for row in rounds:
            writer.writerow(
                [row.round, row.n, f"{row.accuracy:.6f}", f"{row.mean_confidence:.6f}"]
            )
