"""Composable pipeline stages and the single-command report bundle.

Stages exchange immutable snapshots (streams, track rows, summaries); every
artifact is written with sorted keys and repr floats so identical inputs
produce byte-identical bundles. Wall-clock measurements are deliberately not
part of the bundle; `bench` writes those separately.
"""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np

from .errors import DataWarning, StreamFormatError
from .evaluation import evaluate_actions, evaluate_boxes
from .kinematics import (
    PoseFrame,
    TieClip,
    Trajectory,
    group_centroids,
    leave_one_out,
    summarize_clip,
)
from .signatures import (
    FEATURE_NAMES,
    action_sequence_from_stream,
    background_mask,
    build_signature,
    excise_background,
    excise_tool_steps,
    featurize,
    lda_fit,
    lda_project,
    normalize_tool_features,
    tool_sequence_from_stream,
    top_features,
    zscore,
)
from .streams import BBox, Detection, FrameRecord, HandKeypoints, VideoStream, iou
from .synth import (
    CorruptionSpec,
    GroundTruth,
    SkillCohortSpec,
    SynthSpec,
    generate_procedure_sequences,
    generate_stream,
    generate_tie_clips,
)
from .tracking import SortTracker, TrackerConfig

TRACK_KP_MATCH_IOU = 0.5


# ------------------------------------------------------------------ tracking

def track_stream(stream: VideoStream, config: TrackerConfig | None = None):
    """Run SORT over a stream; one row per frame with boxes keyed by track id.

    Input keypoints are re-keyed by track id when their owner box overlaps
    the emitted track box (IoU >= 0.5).
    """
    tracker = SortTracker(config)
    rows = []
    for fr in stream.frames:
        emitted = tracker.step(fr)
        tracks = {str(tid): box.as_list() for tid, box in emitted}
        kps = {}
        for kp in fr.keypoints:
            best_tid, best_v = None, TRACK_KP_MATCH_IOU
            for tid, box in emitted:
                v = iou(kp.owner_box, box)
                if v >= best_v:
                    best_tid, best_v = tid, v
            if best_tid is not None:
                kps[str(best_tid)] = kp.points.tolist()
        row = {"frame": fr.frame_index, "t": fr.timestamp_s, "tracks": tracks}
        if kps:
            row["kps"] = kps
        rows.append(row)
    return rows


def write_tracks(stream: VideoStream, rows, path) -> None:
    header = {"video_id": stream.video_id, "fps": stream.fps,
              "width": stream.width, "height": stream.height,
              "metadata": dict(stream.metadata)}
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(row, sort_keys=True) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tracks(path):
    """(header, rows) from a tracks.jsonl file."""
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise StreamFormatError(f"empty tracks file: {path}")
    header = json.loads(lines[0])
    rows = [json.loads(ln) for ln in lines[1:]]
    return header, rows


def tracking_oracle_report(stream: VideoStream, truth: GroundTruth,
                           config: TrackerConfig | None = None,
                           match_iou: float = 0.3) -> dict:
    """Compare tracker output against generator ground truth.

    Reports whether emitted track ids form a bijection onto true hand ids and
    how many identity switches occurred (changes in the track id following
    each true hand between consecutive matched frames).
    """
    tracker = SortTracker(config)
    follow = {h: [] for h in truth.hand_ids}
    track_to_gt = {}
    for fr, frame_truth in zip(stream.frames, truth.true_boxes):
        for tid, box in tracker.step(fr):
            best_h, best_v = None, match_iou
            for h, gt_box in frame_truth.items():
                v = iou(box, gt_box)
                if v >= best_v:
                    best_h, best_v = h, v
            if best_h is not None:
                follow[best_h].append(tid)
                track_to_gt.setdefault(tid, set()).add(best_h)
    switches = 0
    majority = {}
    for h, tids in follow.items():
        switches += sum(1 for a, b in zip(tids, tids[1:]) if a != b)
        if tids:
            majority[h] = max(set(tids), key=tids.count)
    bijection = (len(majority) == len(truth.hand_ids)
                 and len(set(majority.values())) == len(truth.hand_ids)
                 and all(len(g) == 1 for g in track_to_gt.values()))
    return {"video_id": truth.video_id,
            "n_truth_ids": len(truth.hand_ids),
            "n_matched_track_ids": len(track_to_gt),
            "bijection": bijection,
            "id_switches": switches}


# ------------------------------------------------------------------ skill

def _poses_by_track(rows):
    out = {}
    for row in rows:
        for tid, pts in row.get("kps", {}).items():
            arr = np.asarray(pts, dtype=float)
            box = row["tracks"].get(tid)
            if box is None:
                continue
            kp = HandKeypoints(points=arr, owner_box=BBox(*box))
            pose = PoseFrame.from_keypoints(row["frame"], kp)
            if pose is not None:
                out.setdefault(tid, []).append(pose)
    return out


def _trajectories_by_track(rows):
    samples = {}
    for row in rows:
        for tid, box in row["tracks"].items():
            samples.setdefault(tid, []).append((row["frame"], BBox(*box)))
    return {tid: Trajectory.from_boxes(int(tid), items)
            for tid, items in samples.items()}


def clips_from_tracks(header, rows, clip_defs):
    """Assemble TieClips from a tracks file and clip definitions.

    Each definition carries video_id/start/end/operator_id/experience/
    knot_count and optionally explicit left_track/right_track ids; otherwise
    the two longest tracks in range are used, leftmost (mean centroid x)
    first.
    """
    trajectories = _trajectories_by_track(rows)
    poses = _poses_by_track(rows)
    clips = []
    for definition in clip_defs:
        start, end = int(definition["start"]), int(definition["end"])
        in_range = {tid: traj.slice(start, end) for tid, traj in trajectories.items()}
        in_range = {tid: t for tid, t in in_range.items() if len(t) >= 2}
        if "left_track" in definition or "right_track" in definition:
            left_id = str(definition.get("left_track", ""))
            right_id = str(definition.get("right_track", ""))
        else:
            by_len = sorted(in_range, key=lambda tid: -len(in_range[tid]))[:2]
            if len(by_len) < 2:
                warnings.warn(
                    f"clip {definition.get('video_id')}@{start}-{end} has "
                    f"{len(by_len)} usable tracks; hands missing", DataWarning,
                    stacklevel=2)
                by_len += [None] * (2 - len(by_len))
            with_x = [(tid, float(np.mean(in_range[tid].centroids[:, 0])))
                      for tid in by_len if tid is not None]
            with_x.sort(key=lambda pair: pair[1])
            left_id = with_x[0][0] if with_x else ""
            right_id = with_x[1][0] if len(with_x) > 1 else ""

        def hand_data(tid):
            if not tid or tid not in in_range:
                return None, ()
            pose_seq = tuple(p for p in poses.get(tid, ())
                             if start <= p.frame_index <= end)
            return in_range[tid], pose_seq

        left, left_poses = hand_data(left_id)
        right, right_poses = hand_data(right_id)
        clips.append(TieClip(
            video_id=str(definition["video_id"]), start=start, end=end,
            operator_id=str(definition["operator_id"]),
            experience=str(definition["experience"]),
            knot_count=int(definition["knot_count"]),
            left=left, right=right, left_poses=left_poses, right_poses=right_poses))
    return clips


_SUMMARY_FIELDS = (
    "distance_hand_lengths", "distance_per_knot", "mean_velocity", "max_velocity",
    "mean_acceleration", "max_acceleration", "mean_jerk", "max_jerk",
    "integrated_pose_distance", "pose_distance_per_knot")


def write_skill_csv(summaries, path) -> None:
    """One row per (clip, hand); hands missing from a clip leave empty cells."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_id", "operator_id", "experience", "knot_count",
                         "hand", *_SUMMARY_FIELDS])
        for summary in summaries:
            for hand in ("left", "right"):
                hand_summary = summary.hand(hand)
                cells = [summary.video_id, summary.operator_id, summary.experience,
                         summary.knot_count, hand]
                if hand_summary is None:
                    cells.extend([""] * len(_SUMMARY_FIELDS))
                else:
                    cells.extend(repr(getattr(hand_summary, f)) for f in _SUMMARY_FIELDS)
                writer.writerow(cells)


# ------------------------------------------------------------------ signatures

def sequences_from_stream_dir(stream_dir, resolution_s=5.0):
    """Excised (ActionSequence, ToolSequence) pairs per stream file, sorted."""
    from .streams import parse_stream
    out = {}
    for path in sorted(Path(stream_dir).glob("*.jsonl")):
        if path.name.endswith((".truth.jsonl", ".tracks.jsonl")):
            continue
        stream = parse_stream(path)
        seq = action_sequence_from_stream(stream, resolution_s)
        tools = tool_sequence_from_stream(stream, resolution_s)
        mask = background_mask(seq)
        out[stream.video_id] = (excise_background(seq), excise_tool_steps(tools, mask))
    return out


def write_signature_csv(signatures, path) -> None:
    """Signature curves for each class: one row per normalized-time point."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "t", "cutting", "tying", "suturing",
                         "electrocautery", "needle_driver", "forceps"])
        for name in sorted(signatures):
            sig = signatures[name]
            grid = sig.grid
            for i in range(len(sig.action_curves)):
                writer.writerow([name, repr(float(grid[i])),
                                 *(repr(float(v)) for v in sig.action_curves[i]),
                                 *(repr(float(v)) for v in sig.tool_curves[i])])


def write_features_csv(features, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_id", "label", *FEATURE_NAMES])
        for f in features:
            writer.writerow([f.video_id, f.label or "",
                             *(repr(float(v)) for v in f.values)])


def read_features_csv(path):
    from .signatures import FeatureVector30
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[2:] != list(FEATURE_NAMES):
            raise StreamFormatError(f"unexpected feature columns in {path}")
        out = []
        for row in reader:
            out.append(FeatureVector30(video_id=row[0], label=row[1] or None,
                                       values=np.array([float(v) for v in row[2:]])))
    return out


def write_projection_csv(features, points, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_id", "label", "x", "y"])
        for f, (x, y) in zip(features, points):
            writer.writerow([f.video_id, f.label or "", repr(float(x)), repr(float(y))])


def write_weights_csv(model, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "axis1_weight", "axis2_weight"])
        for k, name in enumerate(FEATURE_NAMES):
            writer.writerow([name, repr(float(model.projection[k, 0])),
                             repr(float(model.projection[k, 1]))])


# ------------------------------------------------------------------ run

def _json_dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def truth_stream_from_ground_truth(stream: VideoStream, truth: GroundTruth) -> VideoStream:
    """A ground-truth twin stream: true hand boxes and actions, confidence 1."""
    frames = []
    for fr, frame_truth in zip(stream.frames, truth.true_boxes):
        dets = tuple(Detection(box=frame_truth[h], category="hand", confidence=1.0)
                     for h in sorted(frame_truth))
        frames.append(FrameRecord(frame_index=fr.frame_index, timestamp_s=fr.timestamp_s,
                                  detections=dets, keypoints=(),
                                  action=truth.actions[fr.frame_index]))
    return VideoStream(video_id=stream.video_id + "-truth", fps=stream.fps,
                       width=stream.width, height=stream.height, frames=tuple(frames))


DEFAULT_RUN_CONFIG = {
    "seed": 7,
    "synth": {"n_videos": 2, "fps": 30.0, "duration_s": 20.0,
              "dropout": 0.05, "jitter": 2.0, "with_keypoints": False},
    "tracker": {"iou": 0.3, "max_age": 30, "min_hits": 3},
    "skill": {"operators_per_group": 3, "clips_per_operator": 4,
              "clip_duration_s": 10.0, "metric": "distance"},
    "signature": {"n_per_class": 10, "window": 5},
    "eval": {"iou": 0.5, "alpha": 0.2},
}


def run_pipeline(config: dict, out_dir) -> dict:
    """Full desk-scale pipeline: synth -> track -> skill -> signature -> lda
    -> eval. Returns the manifest of written artifacts (also saved as
    manifest.json). Output bytes depend only on the config."""
    cfg = json.loads(json.dumps(DEFAULT_RUN_CONFIG))  # deep default copy
    for key, value in (config or {}).items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    out = Path(out_dir)
    (out / "streams").mkdir(parents=True, exist_ok=True)
    (out / "tracks").mkdir(exist_ok=True)
    seed = int(cfg["seed"])
    manifest = {}

    # ---- synth + track + tracking oracle
    s_cfg = cfg["synth"]
    spec = SynthSpec(
        seed=seed, n_videos=int(s_cfg["n_videos"]), fps=float(s_cfg["fps"]),
        duration_s=float(s_cfg["duration_s"]),
        corruption=CorruptionSpec(dropout_rate=float(s_cfg["dropout"]),
                                  jitter_sigma=float(s_cfg["jitter"])),
        with_keypoints=bool(s_cfg["with_keypoints"]))
    tracker_config = TrackerConfig(
        iou_threshold=float(cfg["tracker"]["iou"]),
        max_age=int(cfg["tracker"]["max_age"]),
        min_hits=int(cfg["tracker"]["min_hits"]))
    from .streams import write_stream
    tracking_reports = []
    eval_reports = []
    for index in range(spec.n_videos):
        stream, truth = generate_stream(spec, index)
        stream_path = out / "streams" / f"{stream.video_id}.jsonl"
        write_stream(stream, stream_path)
        (out / "streams" / f"{stream.video_id}.truth.json").write_text(
            json.dumps(truth.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
        rows = track_stream(stream, tracker_config)
        write_tracks(stream, rows, out / "tracks" / f"{stream.video_id}.tracks.jsonl")
        tracking_reports.append(tracking_oracle_report(stream, truth, tracker_config))

        truth_stream = truth_stream_from_ground_truth(stream, truth)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            actions_report = evaluate_actions(stream, truth_stream)
            boxes_report = evaluate_boxes(stream, truth_stream,
                                          iou_thresh=float(cfg["eval"]["iou"]))
        eval_reports.append({"video_id": stream.video_id,
                             "actions": actions_report.to_dict(),
                             "boxes": boxes_report.to_dict()})
    _json_dump(tracking_reports, out / "tracking_report.json")
    _json_dump(eval_reports, out / "eval_report.json")
    manifest["tracking_report"] = "tracking_report.json"
    manifest["eval_report"] = "eval_report.json"

    # ---- skill cohort
    k_cfg = cfg["skill"]
    cohort = SkillCohortSpec(
        seed=seed, operators_per_group=int(k_cfg["operators_per_group"]),
        clips_per_operator=int(k_cfg["clips_per_operator"]),
        clip_duration_s=float(k_cfg["clip_duration_s"]))
    clips, _ = generate_tie_clips(cohort)
    summaries = [summarize_clip(clip, cohort.fps) for clip in clips]
    write_skill_csv(summaries, out / "skill_summary.csv")
    metric = str(k_cfg["metric"])
    centroids = group_centroids(summaries, metric)
    loo = leave_one_out(summaries, metric)
    _json_dump({"metric": metric,
                "centroids": {k: list(v) for k, v in centroids.items()},
                "leave_one_out": {op: {k: list(v) for k, v in cents.items()}
                                  for op, cents in loo.items()}},
               out / "skill_centroids.json")
    manifest["skill_summary"] = "skill_summary.csv"
    manifest["skill_centroids"] = "skill_centroids.json"

    # ---- signatures + features + LDA
    g_cfg = cfg["signature"]
    triples = generate_procedure_sequences(seed=seed, n_per_class=int(g_cfg["n_per_class"]))
    by_class = {}
    for seq, tools, label in triples:
        by_class.setdefault(label, []).append((seq, tools))
    signatures = {label: build_signature([s for s, _ in pairs],
                                         [t for _, t in pairs],
                                         window=int(g_cfg["window"]))
                  for label, pairs in by_class.items()}
    write_signature_csv(signatures, out / "signature.csv")
    manifest["signature"] = "signature.csv"

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        features = normalize_tool_features(
            [featurize(seq, tools, label=label) for seq, tools, label in triples])
        write_features_csv(features, out / "features.csv")
        z, _, _ = zscore(features)
        model = lda_fit(z, [f.label for f in features])
        points = lda_project(z, model)
    write_projection_csv(features, points, out / "lda_projection.csv")
    write_weights_csv(model, out / "lda_weights.csv")
    _json_dump({"eigenvalues": [float(v) for v in model.eigenvalues[:3]],
                "axis1_top_features": top_features(model, 0, 3),
                "axis2_top_features": top_features(model, 1, 3)},
               out / "lda_summary.json")
    manifest["features"] = "features.csv"
    manifest["lda_projection"] = "lda_projection.csv"
    manifest["lda_weights"] = "lda_weights.csv"
    manifest["lda_summary"] = "lda_summary.json"

    _json_dump(manifest, out / "manifest.json")
    return manifest
