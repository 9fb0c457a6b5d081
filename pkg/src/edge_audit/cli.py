"""Command-line entry point: ``edge-audit <command> ...``.

Exit status is 0 on success (and conformance pass), 2 when an audited model
violates its device profile, and 1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


from . import formats
from .complexity import audit
from .errors import EdgeAuditError, RowError
from .evaluation import PredictionRecord, align, evaluate, log_loss, macro_accuracy, rank_submissions
from .features import SAMPLE_RATE, _worker_count, extract_directory
from .inference import forward_float, forward_quantized, predict
from .labels import SCENE_CLASSES
from .model_ir import random_weights, validate
from .quantizer import quantize_model

log = logging.getLogger("edge_audit")


def _columns(text: str | None) -> dict[str, str] | None:
    if not text:
        return None
    mapping = {}
    for item in text.split(","):
        ours, _, theirs = item.partition("=")
        if not theirs:
            raise ValueError(f"--columns expects ours=theirs pairs, got {item!r}")
        mapping[ours.strip()] = theirs.strip()
    return mapping


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _load(model: str, **kwargs):
    return formats.load_model(formats.baseline_path() if model == "baseline" else model, **kwargs)


def cmd_audit(args) -> int:
    shape = formats.parse_input_shape(args.input_shape) if args.input_shape else None
    graph = _load(args.model, input_shape=shape)
    result = validate(graph)
    if not result.ok:
        for v in result.violations:
            print(f"invalid model: {v}", file=sys.stderr)
        return 1
    report = audit(graph, formats.load_profile(args.profile))
    print(report.to_table())
    if args.csv:
        _write(report.to_csv(), args.csv)
    else:
        print()
        sys.stdout.write(report.to_csv())
    return 0 if report.conformance.passed else 2


def cmd_extract(args) -> int:
    log.info("extracting log-mel features under %s", args.wav_dir)
    items = extract_directory(args.wav_dir, sample_rate=args.sample_rate, resample=args.resample)
    if not items:
        print(f"no .wav files under {args.wav_dir}", file=sys.stderr)
        return 1
    formats.write_features(args.out, items)
    if args.debug_csv:
        _write(formats.features_to_csv(items), args.debug_csv)
    print(f"extract: {len(items)} segment(s) -> {args.out} (+ {formats.feature_index_path(args.out).name})")
    return 0


def cmd_init_weights(args) -> int:
    graph = _load(args.model)
    formats.save_model(random_weights(graph, args.seed), args.out)
    print(f"init-weights: seed {args.seed} -> {args.out}")
    return 0


def cmd_quantize(args) -> int:
    graph = _load(args.model)
    calib = [m for _, m in formats.read_features(args.calib)]
    qgraph = quantize_model(graph, calib)
    formats.save_model(qgraph, args.out)
    print(f"quantize: {len(calib)} calibration segment(s), {len(qgraph.qparams)} quantized tensor(s) -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    graph = _load(args.model)
    forward = forward_quantized if graph.precision == "int8" else forward_float
    items = formats.read_features(args.features)
    log.info("running %s inference over %d segment(s)", graph.precision, len(items))

    def one(item):
        name, matrix = item
        probs = forward(graph, matrix)
        if probs.size != len(SCENE_CLASSES):
            raise EdgeAuditError(f"model produces {probs.size} outputs, expected {len(SCENE_CLASSES)}")
        return PredictionRecord(name, predict(probs), probs)

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        records = list(pool.map(one, items))
    _write(formats.write_submission(records), args.out)
    if args.out not in (None, "-"):
        print(f"infer: {len(records)} prediction(s) -> {args.out}")
    return 0


def _truth(args):
    seen = args.seen_devices.split(",") if args.seen_devices else None
    return formats.parse_metadata(args.truth, tsv=args.tsv, columns=_columns(args.columns), seen_devices=seen)


def cmd_score(args) -> int:
    truth = _truth(args)
    preds = formats.parse_submission(args.submission, tsv=args.tsv)
    report = evaluate(preds, truth, by=args.by or (), ci=args.ci)
    print(report.to_table())
    if args.csv:
        _write(report.to_csv(), args.csv)
    else:
        print()
        sys.stdout.write(report.to_csv())
    return 0


def cmd_rank(args) -> int:
    truth = _truth(args)
    skip = {Path(args.truth).resolve(), Path(args.out).resolve()}
    files = sorted(
        p for p in Path(args.submissions).iterdir() if p.suffix.lower() in (".csv", ".tsv") and p.resolve() not in skip
    )
    if not files:
        print(f"no submissions in {args.submissions}", file=sys.stderr)
        return 1

    def score(path: Path):
        aligned = align(formats.parse_submission(path, tsv=args.tsv), truth)
        return path.stem, log_loss(aligned), macro_accuracy(aligned)[0]

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        entries = list(pool.map(score, files))
    board = rank_submissions(entries)
    for e in board:
        print(f"{e.rank:>4}  {e.label:<32} {e.log_loss:8.3f} {100 * e.accuracy:7.1f}%")
    _write(formats.write_leaderboard(board), args.out)
    return 0


def cmd_tradeoff(args) -> int:
    systems = formats.parse_systems(Path(args.systems), tsv=args.tsv)
    _write(formats.emit_tradeoff_table(systems), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edge-audit",
        description="Low-complexity acoustic scene classification: complexity audit, features, inference, scoring.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="count parameters/MACs and check a device profile")
    p.add_argument("model", help="model description (JSON), or 'baseline' for the shipped reference")
    p.add_argument("--profile", default="cortex-m4", help="profile file or shipped profile name (default: cortex-m4)")
    p.add_argument("--input-shape", help="override the input shape, HxWxC")
    p.add_argument("--csv", help="write the per-layer CSV here instead of stdout")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("extract", help="log-mel features for a directory of WAV files")
    p.add_argument("wav_dir")
    p.add_argument("--out", required=True, help="binary feature dump; the index goes next to it as .csv")
    p.add_argument("--sample-rate", type=int, default=SAMPLE_RATE)
    p.add_argument("--resample", action="store_true", help="resample other rates instead of rejecting them")
    p.add_argument("--debug-csv", help="also write a plain CSV dump of every matrix")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("init-weights", help="attach random float weights to a model description")
    p.add_argument("model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("quantize", help="post-training int8 quantization")
    p.add_argument("model")
    p.add_argument("--calib", required=True, help="feature dump used for activation calibration")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", help="run a float or int8 model over a feature dump")
    p.add_argument("model")
    p.add_argument("--features", required=True)
    p.add_argument("--out", default="-", help="submission CSV (default: stdout)")
    p.set_defaults(func=cmd_infer)

    def truth_args(p):
        p.add_argument("--truth", required=True, help="metadata CSV: filename,scene_label,city,device")
        p.add_argument("--tsv", action="store_true", help="inputs are tab-separated")
        p.add_argument("--columns", help="column name mapping, e.g. scene_label=scene,device=source")
        p.add_argument("--seen-devices", help="comma-separated devices present in training (default A,B,C,S1,S2,S3)")

    p = sub.add_parser("score", help="log loss and accuracy of one submission")
    p.add_argument("submission")
    truth_args(p)
    p.add_argument("--by", action="append", choices=["device", "city", "class", "seen", "seen_unseen_device", "seen_unseen_city"])
    p.add_argument("--ci", action="store_true", help="jackknife 95%% confidence intervals")
    p.add_argument("--csv", help="write the report as CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="score every submission in a directory and rank by log loss")
    p.add_argument("submissions")
    truth_args(p)
    p.add_argument("--out", default="leaderboard.csv")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("tradeoff", help="performance versus complexity table")
    p.add_argument("systems", help="CSV: label,log_loss,accuracy,params,macs")
    p.add_argument("--tsv", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RowError as exc:
        for err in getattr(exc, "all_errors", [exc]):
            print(f"error: {err}", file=sys.stderr)
        return 1
    except (EdgeAuditError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
