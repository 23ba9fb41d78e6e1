"""Command-line entry point.

Subcommands: synth, track, skill, signature, featurize, lda, filter, eval,
bench, run. Exit codes: 0 success, 1 input error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .bench import bench_stream
from .errors import InvariantError, SceneStreamError, StreamFormatError
from .evaluation import evaluate_actions, evaluate_boxes, evaluate_keypoints
from .kinematics import group_centroids, leave_one_out, summarize_clip
from .pipeline import (
    clips_from_tracks,
    read_features_csv,
    read_tracks,
    run_pipeline,
    sequences_from_stream_dir,
    track_stream,
    write_features_csv,
    write_projection_csv,
    write_signature_csv,
    write_skill_csv,
    write_tracks,
    write_weights_csv,
)
from .signatures import (
    BUILTIN_RULES,
    build_signature,
    featurize,
    filter_videos,
    lda_fit,
    lda_project,
    normalize_tool_features,
    top_features,
    zscore,
)
from .streams import parse_stream
from .synth import CorruptionSpec, SynthSpec, generate_stream, synth_generate
from .tracking import TrackerConfig


def _tracker_config(args) -> TrackerConfig:
    return TrackerConfig(iou_threshold=args.iou, max_age=args.max_age,
                         min_hits=args.min_hits)


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def cmd_synth(args) -> int:
    spec = SynthSpec(
        seed=args.seed, n_videos=args.n_videos, fps=args.fps,
        duration_s=args.duration,
        corruption=CorruptionSpec(dropout_rate=args.dropout,
                                  jitter_sigma=args.jitter,
                                  confidence_mean=args.conf_mean,
                                  confidence_sigma=args.conf_sigma),
        with_keypoints=args.with_keypoints)
    written = synth_generate(spec, args.out)
    for stream_path, truth_path in written:
        print(stream_path)
        print(truth_path)
    return 0


def cmd_track(args) -> int:
    stream = parse_stream(args.infile)
    rows = track_stream(stream, _tracker_config(args))
    write_tracks(stream, rows, args.out)
    print(args.out)
    return 0


def cmd_skill(args) -> int:
    header, rows = read_tracks(args.tracks)
    clip_defs = json.loads(Path(args.clips).read_text(encoding="utf-8"))
    clips = clips_from_tracks(header, rows, clip_defs)
    summaries = [summarize_clip(clip, args.fps, per_frame_size=args.per_frame_size)
                 for clip in clips]
    write_skill_csv(summaries, args.out)
    print(args.out)
    if args.centroids:
        metric = {"distance": "distance", "pose": "pose"}[args.metric]
        cents = group_centroids(summaries, metric)
        loo = leave_one_out(summaries, metric)
        _write_json({"metric": metric,
                     "centroids": {k: list(v) for k, v in cents.items()},
                     "leave_one_out": {op: {k: list(v) for k, v in c.items()}
                                       for op, c in loo.items()}}, args.centroids)
        print(args.centroids)
    return 0


def _load_class_map(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_signature(args) -> int:
    pairs = sequences_from_stream_dir(args.streams, resolution_s=args.resolution)
    if not pairs:
        raise StreamFormatError(f"no stream files found in {args.streams}")
    class_map = _load_class_map(args.class_map)
    by_class = {}
    for vid, (seq, tools) in pairs.items():
        by_class.setdefault(class_map.get(vid, "all"), []).append((seq, tools))
    signatures = {label: build_signature([s for s, _ in group],
                                         [t for _, t in group], window=args.window)
                  for label, group in by_class.items()}
    write_signature_csv(signatures, args.out)
    print(args.out)
    return 0


def cmd_featurize(args) -> int:
    pairs = sequences_from_stream_dir(args.streams, resolution_s=args.resolution)
    if not pairs:
        raise StreamFormatError(f"no stream files found in {args.streams}")
    class_map = _load_class_map(args.class_map)
    features = [featurize(seq, tools, label=class_map.get(vid))
                for vid, (seq, tools) in sorted(pairs.items())]
    features = normalize_tool_features(features)
    write_features_csv(features, args.out)
    print(args.out)
    return 0


def cmd_lda(args) -> int:
    features = read_features_csv(args.features)
    labels = [f.label for f in features]
    if any(lab is None for lab in labels):
        raise StreamFormatError("all rows in the feature table need a class label")
    z, _, _ = zscore(features)
    model = lda_fit(z, labels)
    points = lda_project(z, model)
    write_projection_csv(features, points, args.out)
    write_weights_csv(model, args.weights)
    print(args.out)
    print(args.weights)
    for axis in (0, 1):
        names = ", ".join(f"{n} ({w:+.3f})" for n, w in top_features(model, axis, 3))
        print(f"axis {axis + 1} top features: {names}")
    return 0


def cmd_filter(args) -> int:
    rule = BUILTIN_RULES.get(args.rule)
    if rule is None:
        raise StreamFormatError(
            f"unknown rule {args.rule!r}; choose from {sorted(BUILTIN_RULES)}")
    catalog = []
    with Path(args.catalog).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                catalog.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StreamFormatError(f"invalid JSON: {exc.msg}", line=line_no) from exc
    selected = filter_videos(catalog, rule)
    if args.out:
        Path(args.out).write_text("\n".join(selected) + ("\n" if selected else ""),
                                  encoding="utf-8")
        print(args.out)
    else:
        for vid in selected:
            print(vid)
    return 0


def cmd_eval(args) -> int:
    pred = parse_stream(args.pred)
    truth = parse_stream(args.truth)
    if args.mode == "actions":
        report = evaluate_actions(pred, truth)
    elif args.mode == "boxes":
        report = evaluate_boxes(pred, truth, iou_thresh=args.iou)
    else:
        report = evaluate_keypoints(pred, truth, alpha=args.alpha, ref=args.ref)
    _write_json(report.to_dict(), args.out)
    print(args.out)
    return 0


def cmd_bench(args) -> int:
    if args.infile:
        stream = parse_stream(args.infile)
    else:
        spec = SynthSpec(seed=args.seed, fps=args.fps,
                         duration_s=args.minutes * 60.0)
        stream, _ = generate_stream(spec, 0)
    report = bench_stream(stream, window_s=args.window)
    _write_json(report.to_dict(), args.out)
    per_frame, per_window = report.per_frame, report.per_window
    print(f"per-frame analytics: p95 {per_frame.p95_s * 1e3:.3f} ms "
          f"(budget {per_frame.budget_s * 1e3:.0f} ms) -> "
          f"{'PASS' if per_frame.within_budget else 'FAIL'}")
    print(f"per-window characterization: p95 {per_window.p95_s * 1e3:.3f} ms "
          f"(budget {per_window.budget_s * 1e3:.0f} ms) -> "
          f"{'PASS' if per_window.within_budget else 'FAIL'}")
    print(args.out)
    return 0


def cmd_run(args) -> int:
    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    manifest = run_pipeline(config, args.out)
    for name in sorted(manifest):
        print(f"{name}: {Path(args.out) / manifest[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenestream",
        description="Analytics over per-frame surgical detection streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic streams with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-videos", type=int, default=1)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--duration", type=float, default=30.0, help="seconds per video")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--conf-mean", type=float, default=1.0)
    p.add_argument("--conf-sigma", type=float, default=0.0)
    p.add_argument("--with-keypoints", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="run SORT over a stream")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=0.3)
    p.add_argument("--max-age", type=int, default=30)
    p.add_argument("--min-hits", type=int, default=3)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("skill", help="kinematic summaries over tie clips")
    p.add_argument("--tracks", required=True)
    p.add_argument("--clips", required=True, help="clips.json definitions")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--metric", choices=("distance", "pose"), default="distance")
    p.add_argument("--per-frame-size", action="store_true",
                   help="normalize velocity by per-frame hand size")
    p.add_argument("--out", required=True, help="summary CSV")
    p.add_argument("--centroids", help="optional centroid/leave-one-out JSON")
    p.set_defaults(func=cmd_skill)

    p = sub.add_parser("signature", help="aggregate surgical signatures")
    p.add_argument("--streams", required=True, help="directory of stream files")
    p.add_argument("--class-map", help="JSON of video_id -> class")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--resolution", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_signature)

    p = sub.add_parser("featurize", help="30-feature parameterization per video")
    p.add_argument("--streams", required=True)
    p.add_argument("--class-map", help="JSON of video_id -> class")
    p.add_argument("--resolution", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("lda", help="discriminant projection of a feature table")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="projection CSV")
    p.add_argument("--weights", required=True, help="per-feature weights CSV")
    p.set_defaults(func=cmd_lda)

    p = sub.add_parser("filter", help="select videos by metadata rule")
    p.add_argument("--catalog", required=True, help="catalog.jsonl of metadata")
    p.add_argument("--rule", required=True, choices=sorted(BUILTIN_RULES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("mode", choices=("actions", "boxes", "keypoints"))
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--ref", choices=("truth", "pred"), default="truth",
                   help="box normalizing PCK distances")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency vs the real-time budgets")
    p.add_argument("--in", dest="infile")
    p.add_argument("--minutes", type=float, default=30.0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", help="full pipeline producing a report bundle")
    p.add_argument("--config", help="JSON config; defaults are used when omitted")
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (StreamFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except SceneStreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
