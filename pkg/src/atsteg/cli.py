"""Command-line front end.

Subcommands: embed (simulate payloads), analyze (label a directory),
search (estimate the payload rate), stream (classify arrivals one by one),
experiment (spec-driven runs), features (dump feature vectors). Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

from .ats import ats_run
from .features import FeatureParams, extract_corpus, write_features_csv
from .harness import (
    load_spec,
    ratio_sweep,
    run_experiment,
    stream_experiment_average,
    write_experiment_csv,
    write_stream_csv,
)
from .image_io import (
    GrayImage,
    ImageFormatError,
    clip_center,
    load_corpus,
    load_image,
    save_pgm,
)
from .learner import LearnerParams, save_model
from .quantify import StreamState, confidence, search_bitrate, stream_add
from .stego import SUPPORTED_ALGORITHMS, EmbedConfig, lsbm_embed


class UsageError(Exception):
    """Bad arguments or inconsistent inputs; maps to exit code 2."""


def _parse_key(text: str) -> int:
    try:
        key = int(text, 16)
    except ValueError:
        raise UsageError(f"--key must be hexadecimal, got {text!r}") from None
    if not 0 <= key < 2**64:
        raise UsageError("--key must fit in 64 bits")
    return key


def _parse_clip(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"--clip must look like 512x512, got {text!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"--clip must look like 512x512, got {text!r}") from None
    if w < 1 or h < 1:
        raise UsageError("--clip dimensions must be positive")
    return w, h


def _parse_rate(value: float) -> float:
    if not 0.0 < value <= 1.0:
        raise UsageError(f"--rate must be in (0, 1], got {value}")
    return value


def _load_inputs(args) -> list[GrayImage]:
    images = load_corpus(args.in_dir)
    if args.clip:
        w, h = _parse_clip(args.clip)
        images = [clip_center(img, w, h) for img in images]
    return images


def _read_truth(path) -> dict[str, str]:
    truth = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if row[0] == "id" and len(row) >= 2 and row[1] == "label":
                continue
            if len(row) < 2:
                raise UsageError(f"truth rows need id,label; got {row!r}")
            truth[row[0]] = row[1].strip()
    return truth


def _learner_params(args) -> LearnerParams:
    return LearnerParams(fold_seed=getattr(args, "seed", 0))


def _feature_params(args) -> FeatureParams:
    try:
        return FeatureParams(truncation=args.truncation, order=args.order)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _split_config(args) -> EmbedConfig:
    try:
        return EmbedConfig(
            algorithm=args.algo, rate=_parse_rate(args.rate), key=_parse_key(args.key)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_embed(args) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    key = _parse_key(args.key)
    try:
        cfg = EmbedConfig(algorithm=args.algo, rate=_parse_rate(args.rate), key=key)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    images = load_corpus(in_dir)
    if args.clip:
        w, h = _parse_clip(args.clip)
        images = [clip_center(img, w, h) for img in images]
    fingerprint = hashlib.blake2b(key.to_bytes(8, "little"), digest_size=8).hexdigest()
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "rate", "key_fingerprint"])
        for img in images:
            embedded = lsbm_embed(img, cfg)
            save_pgm(embedded, out_dir / f"{img.id}.pgm")
            writer.writerow([img.id, f"{cfg.rate:g}", fingerprint])
    print(f"embedded {len(images)} images -> {out_dir} (manifest: {manifest_path})")
    return 0


def _print_confusion(report, out=sys.stdout) -> None:
    c = report.counts
    print("Acc\tTP\tTN\tFP\tFN", file=out)
    print(f"{report.accuracy:.4f}\t{c.tp}\t{c.tn}\t{c.fp}\t{c.fn}", file=out)


def _emit_report(report, args) -> None:
    if args.format == "csv":
        if args.out:
            report.write_csv(args.out)
        else:
            csv.writer(sys.stdout).writerows(report.csv_rows())
    else:
        if args.out:
            report.write_json(args.out)
        else:
            json.dump(report.to_json_dict(), sys.stdout, indent=2)
            print()


def cmd_analyze(args) -> int:
    images = _load_inputs(args)
    if len(images) < 2:
        raise UsageError(f"need at least 2 input images, found {len(images)}")
    split = _split_config(args)
    truth = _read_truth(args.truth) if args.truth else None
    feat = _feature_params(args)
    try:
        details = ats_run(
            images,
            split,
            feat_params=feat,
            learner_params=_learner_params(args),
            truth=truth,
            workers=args.threads,
        )
    except ValueError as exc:
        if "truth/id mismatch" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    report = details.report
    if args.save_model:
        save_model(details.fit.model, args.save_model)
    _emit_report(report, args)
    if truth is not None:
        _print_confusion(report, out=sys.stdout if args.out else sys.stderr)
    if report.diagnostics.warning:
        print(f"warning: {report.diagnostics.warning}", file=sys.stderr)
    return 0


def cmd_search(args) -> int:
    images = _load_inputs(args)
    if len(images) < 2:
        raise UsageError(f"need at least 2 input images, found {len(images)}")
    try:
        rates = [_parse_rate(float(r)) for r in args.rates.split(",") if r.strip()]
    except ValueError:
        raise UsageError(f"--rates must be comma-separated numbers, got {args.rates!r}") from None
    if not rates:
        raise UsageError("--rates is empty")
    entries = search_bitrate(
        images,
        args.algo,
        rates,
        key=_parse_key(args.key),
        learner_params=_learner_params(args),
    )
    writer = csv.writer(sys.stdout)
    writer.writerow(["tentative_rate", "score", "predicted_stego_fraction"])
    for e in entries:
        writer.writerow(
            [f"{e.tentative_rate:g}", f"{e.score:.6g}",
             f"{e.report.diagnostics.predicted_stego_fraction:.4f}"]
        )
    print(f"estimated rate: {entries[0].tentative_rate:g}", file=sys.stderr)
    return 0


def _stream_paths_stdin():
    for line in sys.stdin:
        path = line.strip()
        if path:
            yield Path(path)


def _stream_paths_watch(directory: Path, poll_interval: float):
    seen: set[Path] = set()
    while True:
        paths = sorted(
            p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".png")
        )
        for p in paths:
            if p not in seen:
                seen.add(p)
                yield p
        time.sleep(poll_interval)


def cmd_stream(args) -> int:
    split = _split_config(args)
    clip = _parse_clip(args.clip) if args.clip else None
    state = StreamState(
        split=split,
        n_min=args.nmin,
        batch_every=args.batch_every,
        learner_params=_learner_params(args),
    )
    if args.stdin:
        paths = _stream_paths_stdin()
    else:
        directory = Path(args.watch)
        if not directory.is_dir():
            raise UsageError(f"--watch target is not a directory: {directory}")
        paths = _stream_paths_watch(directory, args.poll_interval)
    for path in paths:
        img = load_image(path)
        if clip:
            img = clip_center(img, *clip)
        labels = stream_add(state, img)
        if labels is None:
            continue
        record = {
            "round": state.rounds,
            "n": len(state.images),
            "labels": labels,
            "confidence": {image_id: confidence(state, image_id) for image_id in labels},
        }
        print(json.dumps(record), flush=True)
    return 0


def cmd_experiment(args) -> int:
    spec = load_spec(args.spec)
    if args.sweep:
        results = ratio_sweep(spec, args.sweep)
        write_experiment_csv(results, spec, args.out)
    elif args.stream_seeds:
        seeds = [int(s) for s in args.stream_seeds.split(",") if s.strip()]
        rounds = stream_experiment_average(spec, seeds)
        write_stream_csv(rounds, spec, args.out)
    else:
        result = run_experiment(spec)
        write_experiment_csv([result], spec, args.out)
        if result.warning:
            print(f"warning: {result.warning}", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


def cmd_features(args) -> int:
    images = _load_inputs(args)
    feat = _feature_params(args)
    matrix = extract_corpus(images, feat, workers=args.threads)
    write_features_csv(matrix, args.out)
    print(f"wrote {len(images)} feature rows -> {args.out}")
    return 0


def _add_io_options(p: argparse.ArgumentParser, with_clip: bool = True) -> None:
    p.add_argument("--in", dest="in_dir", required=True, help="input image directory")
    if with_clip:
        p.add_argument("--clip", help="center-clip inputs to WxH (e.g. 512x512)")


def _add_split_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", default="lsbm", choices=SUPPORTED_ALGORITHMS,
                   help="embedding algorithm assumed for the splitting step")
    p.add_argument("--key", default="0", help="hexadecimal master key (default 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for fold assignment")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for feature extraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atsteg",
        description="Unsupervised detection of least-significant-bit matching payloads",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="embed pseudorandom payloads into a directory")
    _add_io_options(p)
    p.add_argument("--out", dest="out_dir", required=True, help="output directory")
    p.add_argument("--algo", default="lsbm", choices=SUPPORTED_ALGORITHMS)
    p.add_argument("--rate", type=float, required=True, help="payload rate in bits per pixel")
    p.add_argument("--key", default="0", help="hexadecimal embedding key")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("analyze", help="label every image in a directory cover or stego")
    _add_io_options(p)
    _add_split_options(p)
    p.add_argument("--rate", type=float, required=True,
                   help="assumed payload rate in bits per pixel")
    p.add_argument("--truth", help="CSV of id,label rows for scoring")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--save-model", help="write the fitted model as JSON")
    p.add_argument("--truncation", type=int, default=3)
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("search", help="rank candidate payload rates by partition score")
    _add_io_options(p)
    _add_split_options(p)
    p.add_argument("--rates", required=True, help="comma-separated candidate rates")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("stream", help="classify images as they arrive")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--stdin", action="store_true", help="read image paths from stdin")
    src.add_argument("--watch", help="poll a directory for new images")
    _add_split_options(p)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--clip", help="center-clip inputs to WxH")
    p.add_argument("--nmin", type=int, default=10,
                   help="images required before the first classification")
    p.add_argument("--batch-every", type=int, default=1,
                   help="classify after every this many arrivals once running")
    p.add_argument("--poll-interval", type=float, default=1.0)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("experiment", help="run a spec-driven experiment")
    p.add_argument("--spec", required=True, help="TOML or JSON experiment spec")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--sweep", type=int, help="vary the cover/stego ratio with this step")
    p.add_argument("--stream-seeds", help="average streaming runs over these order seeds")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("features", help="write feature vectors for a directory")
    _add_io_options(p)
    p.add_argument("--out", required=True, help="feature CSV path")
    p.add_argument("--truncation", type=int, default=3)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ImageFormatError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
