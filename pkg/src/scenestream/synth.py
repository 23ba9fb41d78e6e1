"""Deterministic synthetic scene streams with ground truth.

The generator is the project's measurement oracle: every stream ships with a
sidecar recording true identities, true actions, and true kinematic totals,
all computed with the generator's own naive loops at generation time. All
randomness flows from one explicit seed; per-video substreams derive from
(seed, index) so videos can be produced independently and in parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvariantError
from .kinematics import PoseFrame, TieClip, Trajectory
from .signatures import ActionSequence, ToolSequence
from .streams import (
    ACTIONS,
    BACKGROUND,
    BBox,
    Detection,
    FrameRecord,
    HAND,
    HandKeypoints,
    TOOL_CLASSES,
    VideoStream,
    write_stream,
)

# unit hand-keypoint template: palm at origin, thumb and index chains spread
# apart, 12 filler points for the remaining fingers; scaled by hand size
_HAND_TEMPLATE = np.array(
    [(0.0, 0.0)]
    + [(-0.12 * k, -0.10 * k) for k in range(1, 5)]  # thumb chain
    + [(0.06 * k, -0.11 * k) for k in range(1, 5)]  # index chain
    + [(0.10 + 0.02 * k, -0.10 * k1) for k in range(3) for k1 in range(1, 5)]
)


@dataclass(frozen=True)
class HandMotionSpec:
    """Waypoint-path motion model for one synthetic hand.

    Waypoints are drawn uniformly from `region` unless an explicit
    `waypoints` polyline is given; the hand traverses them at constant speed.
    """

    region: tuple = (200.0, 200.0, 1000.0, 600.0)  # waypoint sampling box
    speed_px: float = 4.0  # per frame
    box_width: float = 110.0
    box_height: float = 90.0
    noise_px: float = 0.0  # per-frame true-position noise
    waypoints: tuple | None = None

    def __post_init__(self):
        if self.speed_px < 0 or self.noise_px < 0:
            raise InvariantError("speed and noise must be >= 0")


@dataclass(frozen=True)
class CorruptionSpec:
    """Detector-error model applied on top of ground truth."""

    dropout_rate: float = 0.0
    jitter_sigma: float = 0.0
    confidence_mean: float = 1.0
    confidence_sigma: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise InvariantError("dropout_rate must be in [0,1)")
        if self.jitter_sigma < 0 or self.confidence_sigma < 0:
            raise InvariantError("sigmas must be >= 0")

    @property
    def is_zero(self) -> bool:
        return (self.dropout_rate == 0 and self.jitter_sigma == 0
                and self.confidence_mean == 1.0 and self.confidence_sigma == 0)


@dataclass(frozen=True)
class PhaseSpec:
    """One procedure phase: its action and expected tools on screen."""

    action: str
    fraction: float  # of the video duration
    tool_rates: tuple = ()  # (tool_class, mean count per frame) pairs

    def __post_init__(self):
        if self.fraction <= 0:
            raise InvariantError("phase fraction must be > 0")
        for tool, rate in self.tool_rates:
            if tool not in TOOL_CLASSES or rate < 0:
                raise InvariantError(f"bad tool rate {tool}={rate}")


DEFAULT_PHASES = (
    PhaseSpec(action="cutting", fraction=0.3, tool_rates=(("electrocautery", 0.8),)),
    PhaseSpec(action="suturing", fraction=0.4, tool_rates=(("needle_driver", 0.9),
                                                           ("forceps", 0.5))),
    PhaseSpec(action="tying", fraction=0.3, tool_rates=(("needle_driver", 0.7),)),
)


@dataclass(frozen=True)
class SynthSpec:
    """Full description of a synthetic cohort; the seed fixes every byte."""

    seed: int = 0
    n_videos: int = 1
    fps: float = 30.0
    duration_s: float = 30.0
    width: int = 1280
    height: int = 720
    hands: tuple = (HandMotionSpec(region=(150.0, 200.0, 550.0, 550.0)),
                    HandMotionSpec(region=(700.0, 200.0, 1100.0, 550.0)))
    phases: tuple = DEFAULT_PHASES
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    with_keypoints: bool = False

    def __post_init__(self):
        if self.duration_s <= 0 or self.fps <= 0:
            raise InvariantError("duration_s and fps must be > 0")
        if self.n_videos < 1:
            raise InvariantError("n_videos must be >= 1")
        if not self.hands:
            raise InvariantError("at least one hand is required")


@dataclass
class GroundTruth:
    """Generator-recorded truth for one stream."""

    video_id: str
    hand_ids: list
    true_boxes: list  # per frame: {hand_id: BBox}
    actions: list  # per frame action label
    path_px: dict  # hand_id -> naive summed centroid path, pixels
    path_hand_lengths: dict  # hand_id -> path / mean hand size
    mean_hand_size: dict
    pose_distance: dict  # hand_id -> naive integrated pose change

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "hand_ids": list(self.hand_ids),
            "actions": list(self.actions),
            "true_boxes": [{str(h): b.as_list() for h, b in frame.items()}
                           for frame in self.true_boxes],
            "path_px": {str(k): v for k, v in self.path_px.items()},
            "path_hand_lengths": {str(k): v for k, v in self.path_hand_lengths.items()},
            "mean_hand_size": {str(k): v for k, v in self.mean_hand_size.items()},
            "pose_distance": {str(k): v for k, v in self.pose_distance.items()},
        }


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _waypoint_positions(rng, motion: HandMotionSpec, n_frames: int) -> np.ndarray:
    """Constant-speed traversal of a waypoint polyline, vectorized."""
    x0, y0, x1, y1 = motion.region
    if motion.waypoints is not None:
        poly = np.asarray(motion.waypoints, dtype=float).reshape(-1, 2)
    else:
        needed = motion.speed_px * max(n_frames - 1, 1) + 1.0
        pts = [rng.uniform((x0, y0), (x1, y1))]
        total = 0.0
        while total < needed:
            nxt = rng.uniform((x0, y0), (x1, y1))
            total += float(np.linalg.norm(nxt - pts[-1]))
            pts.append(nxt)
        poly = np.array(pts)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    arc = np.arange(n_frames) * motion.speed_px
    xs = np.interp(arc, cum, poly[:, 0])  # clamps at the polyline end
    ys = np.interp(arc, cum, poly[:, 1])
    pos = np.column_stack([xs, ys])
    if motion.noise_px > 0:
        pos = pos + rng.normal(0, motion.noise_px, size=pos.shape)
    return np.maximum(pos, 1.0)  # keeps box corners valid after clamping


def _phase_schedule(phases, n_frames: int) -> list:
    """The phase owning each frame, by cumulative duration fractions."""
    fractions = np.array([p.fraction for p in phases], dtype=float)
    fractions = fractions / fractions.sum()
    bounds = np.floor(np.cumsum(fractions) * n_frames).astype(int)
    schedule, start = [], 0
    for phase, stop in zip(phases, bounds):
        schedule.extend([phase] * (stop - start))
        start = stop
    while len(schedule) < n_frames:
        schedule.append(phases[-1])
    return schedule[:n_frames]


def _hand_keypoints(center, size) -> np.ndarray:
    pts = center + _HAND_TEMPLATE * size
    return np.column_stack([pts, np.ones(21)])


def generate_stream(spec: SynthSpec, index: int = 0):
    """One synthetic video stream plus its ground truth sidecar."""
    rng = _rng_for(spec.seed, index)
    n_frames = max(int(round(spec.duration_s * spec.fps)), 1)
    video_id = f"synth-{spec.seed}-{index:04d}"

    hand_ids = list(range(len(spec.hands)))
    positions = [_waypoint_positions(rng, motion, n_frames) for motion in spec.hands]
    sizes = [(motion.box_width + motion.box_height) / 2.0 for motion in spec.hands]
    schedule = _phase_schedule(spec.phases, n_frames)
    actions = [phase.action for phase in schedule]

    frames = []
    true_boxes = []
    corruption = spec.corruption
    for k in range(n_frames):
        dets = []
        frame_truth = {}
        kps = []
        for h, motion in enumerate(spec.hands):
            cx, cy = positions[h][k]
            half_w, half_h = motion.box_width / 2.0, motion.box_height / 2.0
            box = BBox(max(cx - half_w, 0.0), max(cy - half_h, 0.0),
                       cx + half_w, cy + half_h)
            frame_truth[h] = box
            if corruption.dropout_rate > 0 and rng.random() < corruption.dropout_rate:
                continue
            out_box = box
            if corruption.jitter_sigma > 0:
                dx, dy = rng.normal(0, corruption.jitter_sigma, size=2)
                out_box = BBox(max(box.x_min + dx, 0.0), max(box.y_min + dy, 0.0),
                               box.x_max + dx, box.y_max + dy)
            conf = corruption.confidence_mean
            if corruption.confidence_sigma > 0:
                conf = float(np.clip(rng.normal(conf, corruption.confidence_sigma), 0.0, 1.0))
            dets.append(Detection(box=out_box, category=HAND, confidence=conf))
            if spec.with_keypoints:
                kps.append(HandKeypoints(
                    points=_hand_keypoints(positions[h][k], sizes[h]),
                    owner_box=out_box))
        for tool, rate in schedule[k].tool_rates:
            for _ in range(int(rng.poisson(rate))):
                tx = float(rng.uniform(0, spec.width - 80))
                ty = float(rng.uniform(0, spec.height - 40))
                dets.append(Detection(box=BBox(tx, ty, tx + 80, ty + 40),
                                      category=tool, confidence=corruption.confidence_mean))
        true_boxes.append(frame_truth)
        frames.append(FrameRecord(frame_index=k, timestamp_s=k / spec.fps,
                                  detections=tuple(dets), keypoints=tuple(kps),
                                  action=actions[k]))

    # naive oracle totals over the true (uncorrupted) trajectories
    path_px, path_hl, mean_size = {}, {}, {}
    for h in hand_ids:
        total = 0.0
        for k in range(1, n_frames):
            dx = positions[h][k][0] - positions[h][k - 1][0]
            dy = positions[h][k][1] - positions[h][k - 1][1]
            total += math.sqrt(dx * dx + dy * dy)
        path_px[h] = total
        mean_size[h] = sizes[h]
        path_hl[h] = total / sizes[h]

    stream = VideoStream(video_id=video_id, fps=spec.fps, width=spec.width,
                         height=spec.height, frames=tuple(frames),
                         metadata={"synthetic": True, "seed": spec.seed, "index": index})
    truth = GroundTruth(video_id=video_id, hand_ids=hand_ids, true_boxes=true_boxes,
                        actions=actions, path_px=path_px, path_hand_lengths=path_hl,
                        mean_hand_size=mean_size, pose_distance={h: 0.0 for h in hand_ids})
    return stream, truth


def generate_cohort(spec: SynthSpec):
    return [generate_stream(spec, index) for index in range(spec.n_videos)]


def synth_generate(spec: SynthSpec, out_dir) -> list:
    """Write stream files plus ground-truth sidecars; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index in range(spec.n_videos):
        stream, truth = generate_stream(spec, index)
        stream_path = out_dir / f"{stream.video_id}.jsonl"
        truth_path = out_dir / f"{stream.video_id}.truth.json"
        write_stream(stream, stream_path)
        truth_path.write_text(json.dumps(truth.to_dict(), sort_keys=True) + "\n",
                              encoding="utf-8")
        written.append((stream_path, truth_path))
    return written


# ------------------------------------------------------------- skill cohort

@dataclass(frozen=True)
class SkillCohortSpec:
    """Tie-clip cohort calibrated to per-experience travel targets.

    Targets default to the two-vs-four hand-lengths scale separating
    experienced operators from trainees.
    """

    seed: int = 0
    fps: float = 30.0
    clip_duration_s: float = 15.0
    hand_box_size: float = 100.0
    operators_per_group: int = 7
    clips_per_operator: int = 8
    targets: tuple = (("experienced", 2.0), ("trainee", 4.0))
    pose_rates: tuple = (("experienced", 0.004), ("trainee", 0.016))
    operator_sigma: float = 0.05  # relative spread between operators
    clip_sigma: float = 0.03  # relative spread between clips

    def __post_init__(self):
        if self.clip_duration_s <= 0 or self.fps <= 0:
            raise InvariantError("clip duration and fps must be > 0")
        if self.operators_per_group < 1 or self.clips_per_operator < 1:
            raise InvariantError("cohort sizes must be >= 1")


def _bounded_walk(rng, n_steps, step_len, start, lo=150.0, hi=1800.0):
    """Random-direction walk with exact step lengths, reflected at bounds."""
    pos = np.empty((n_steps + 1, 2))
    pos[0] = start
    theta = rng.uniform(0, 2 * np.pi)
    for k in range(n_steps):
        theta += rng.normal(0, 0.5)
        step = np.array([math.cos(theta), math.sin(theta)]) * step_len
        nxt = pos[k] + step
        for d in range(2):
            if nxt[d] < lo or nxt[d] > hi:
                step[d] = -step[d]
                nxt[d] = pos[k][d] + step[d]
        pos[k + 1] = nxt
    return pos


def _pose_sequence(rng, n_frames, size, pose_rate):
    """Deforming keypoint chains; returns (pose frames, naive pose distance)."""
    base = _HAND_TEMPLATE[:9] * size
    deform = np.zeros((9, 2))
    frames, nine = [], []
    for k in range(n_frames):
        if k > 0 and pose_rate > 0:
            deform = np.clip(deform + rng.normal(0, pose_rate * size, size=(9, 2)),
                             -0.3 * size, 0.3 * size)
        pts = base + deform
        nine.append(pts.copy())
        frames.append(PoseFrame(frame_index=k, points=pts, hand_size=size))

    # naive integrated pose change: chain vectors, L1, earlier-frame size
    def chain_vectors(p):
        vecs = []
        prev = p[0]
        for idx in range(1, 5):
            vecs.append(p[idx] - prev)
            prev = p[idx]
        prev = p[0]
        for idx in range(5, 9):
            vecs.append(p[idx] - prev)
            prev = p[idx]
        return vecs

    total = 0.0
    for k in range(1, n_frames):
        va, vb = chain_vectors(nine[k - 1]), chain_vectors(nine[k])
        step = 0.0
        for a, b in zip(va, vb):
            step += abs(b[0] - a[0]) + abs(b[1] - a[1])
        total += step / size
    return frames, total


def generate_tie_clips(spec: SkillCohortSpec):
    """A cohort of TieClips plus the generator's own per-clip metric totals.

    Returns (clips, truths) where truths[i] maps hand name to
    {"path_hand_lengths", "pose_distance"} for clips[i].
    """
    rng = np.random.default_rng([spec.seed, 977])
    n_frames = max(int(round(spec.clip_duration_s * spec.fps)), 2)
    n_steps = n_frames - 1
    size = spec.hand_box_size
    pose_rates = dict(spec.pose_rates)

    clips, truths = [], []
    for experience, target in spec.targets:
        for op_idx in range(spec.operators_per_group):
            operator_id = f"{experience[:3]}-{op_idx}"
            op_mult = float(np.clip(rng.normal(1.0, spec.operator_sigma), 0.5, 1.5))
            for clip_idx in range(spec.clips_per_operator):
                clip_mult = float(np.clip(rng.normal(1.0, spec.clip_sigma), 0.5, 1.5))
                hands, truth = {}, {}
                for hand, home in (("left", (400.0, 500.0)), ("right", (900.0, 500.0))):
                    hand_mult = float(np.clip(rng.normal(1.0, spec.clip_sigma / 2), 0.8, 1.2))
                    length_hl = target * op_mult * clip_mult * hand_mult
                    step_len = length_hl * size / n_steps
                    pos = _bounded_walk(rng, n_steps, step_len, np.array(home))
                    traj = Trajectory(track_id=0 if hand == "left" else 1,
                                      frames=np.arange(n_frames),
                                      centroids=pos, sizes=np.full(n_frames, size))
                    poses, pose_total = _pose_sequence(rng, n_frames, size,
                                                       pose_rates[experience])
                    hands[hand] = (traj, tuple(poses))
                    # the walk takes n_steps of exactly step_len
                    truth[hand] = {"path_hand_lengths": step_len * n_steps / size,
                                   "pose_distance": pose_total}
                clips.append(TieClip(
                    video_id=f"tie-{experience}-{op_idx}-{clip_idx}",
                    start=0, end=n_frames - 1, operator_id=operator_id,
                    experience=experience, knot_count=int(rng.integers(3, 8)),
                    left=hands["left"][0], right=hands["right"][0],
                    left_poses=hands["left"][1], right_poses=hands["right"][1]))
                truths.append(truth)
    return clips, truths


# --------------------------------------------------------- procedure cohort

@dataclass(frozen=True)
class ProcedureClassSpec:
    """Sequence-level procedure model with class-distinct quartile profiles."""

    name: str
    quartile_action_probs: tuple  # 4 rows of (cutting, tying, suturing) probs
    quartile_tool_rates: tuple  # 4 rows of mean counts per TOOL_CLASSES
    steps_range: tuple = (40, 80)
    opening_fraction: float = 0.1  # deterministic cutting head

    def __post_init__(self):
        if len(self.quartile_action_probs) != 4 or len(self.quartile_tool_rates) != 4:
            raise InvariantError("need 4 quartile rows")
        for row in self.quartile_action_probs:
            if abs(sum(row) - 1.0) > 1e-9:
                raise InvariantError("action probabilities must sum to 1 per quartile")


DEFAULT_PROCEDURE_CLASSES = (
    ProcedureClassSpec(
        name="appendectomy",
        quartile_action_probs=((0.9, 0.05, 0.05), (0.2, 0.7, 0.1),
                               (0.2, 0.2, 0.6), (0.1, 0.3, 0.6)),
        quartile_tool_rates=((1.2, 0.1, 0.2), (0.2, 1.0, 0.3),
                             (0.1, 0.8, 0.6), (0.1, 0.6, 0.7))),
    ProcedureClassSpec(
        name="pilonidal",
        quartile_action_probs=((0.8, 0.1, 0.1), (0.7, 0.1, 0.2),
                               (0.2, 0.1, 0.7), (0.1, 0.1, 0.8)),
        quartile_tool_rates=((1.5, 0.1, 0.1), (1.0, 0.2, 0.2),
                             (0.2, 1.2, 0.4), (0.1, 1.0, 0.3))),
    ProcedureClassSpec(
        name="thyroidectomy",
        quartile_action_probs=((0.85, 0.1, 0.05), (0.4, 0.4, 0.2),
                               (0.3, 0.5, 0.2), (0.3, 0.3, 0.4)),
        quartile_tool_rates=((1.8, 0.2, 0.8), (0.8, 0.5, 1.0),
                             (0.5, 0.5, 1.2), (0.3, 0.4, 1.0))),
)


def generate_procedure_sequences(seed: int, n_per_class: int,
                                 classes=DEFAULT_PROCEDURE_CLASSES,
                                 resolution_s: float = 5.0):
    """Background-free (ActionSequence, ToolSequence, class-name) triples."""
    out = []
    for c_idx, cls in enumerate(classes):
        rng = np.random.default_rng([seed, 555, c_idx])
        for v in range(n_per_class):
            n = int(rng.integers(cls.steps_range[0], cls.steps_range[1] + 1))
            head = max(1, int(round(cls.opening_fraction * n)))
            labels = ["cutting"] * head
            counts = np.zeros((n, len(TOOL_CLASSES)))
            for k in range(n):
                q = min(4 * k // n, 3)
                if k >= head:
                    labels.append(str(rng.choice(ACTIONS,
                                                 p=cls.quartile_action_probs[q])))
                counts[k] = rng.poisson(cls.quartile_tool_rates[q])
            vid = f"{cls.name}-{v:03d}"
            out.append((ActionSequence(video_id=vid, labels=tuple(labels),
                                       resolution_s=resolution_s),
                        ToolSequence(video_id=vid, counts=counts,
                                     resolution_s=resolution_s),
                        cls.name))
    return out
