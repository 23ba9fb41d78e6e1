"""Normalized hand-motion and hand-pose skill metrics over instrument-tie clips.

Distances are reported in hand-lengths (pixels divided by the clip-mean hand
box size), velocities in 1/s after multiplying by the frame rate, and pose
change as the summed L1 distance between the eight keypoint chain vectors of
consecutive frames, divided by hand size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataWarning, InvariantError
from .streams import BBox, HandKeypoints, centroid, hand_size
from .streams import INDEX_CHAIN, PALM_INDEX, THUMB_CHAIN

EXPERIENCE_LEVELS = ("experienced", "trainee")
HANDS = ("left", "right")

POSE_GAP_SPLIT_S = 1.0  # gaps longer than this split a pose sequence


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One hand's (frame_index, centroid, hand_size) samples, frame-ordered."""

    track_id: int
    frames: np.ndarray  # (n,) int
    centroids: np.ndarray  # (n, 2)
    sizes: np.ndarray  # (n,)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=int).copy()
        cents = np.asarray(self.centroids, dtype=float).reshape(-1, 2).copy()
        sizes = np.asarray(self.sizes, dtype=float).copy()
        if not (len(frames) == len(cents) == len(sizes)):
            raise InvariantError("Trajectory arrays must have equal length")
        if len(frames) > 1 and np.any(np.diff(frames) <= 0):
            raise InvariantError("Trajectory frames must be strictly increasing")
        if np.any(sizes <= 0):
            raise InvariantError("Trajectory hand sizes must be positive")
        for arr in (frames, cents, sizes):
            arr.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "centroids", cents)
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_boxes(cls, track_id: int, items) -> "Trajectory":
        """Build from (frame_index, BBox) pairs, e.g. a tracker history."""
        items = list(items)
        frames = [i for i, _ in items]
        cents = [centroid(b) for _, b in items]
        sizes = [hand_size(b) for _, b in items]
        return cls(track_id=track_id, frames=np.array(frames, dtype=int),
                   centroids=np.array(cents, dtype=float).reshape(-1, 2),
                   sizes=np.array(sizes, dtype=float))

    def slice(self, start: int, end: int) -> "Trajectory":
        keep = (self.frames >= start) & (self.frames <= end)
        return Trajectory(track_id=self.track_id, frames=self.frames[keep],
                          centroids=self.centroids[keep], sizes=self.sizes[keep])


@dataclass(frozen=True, eq=False)
class PoseFrame:
    """Nine skill keypoints (palm, thumb x4, index x4) plus the hand size."""

    frame_index: int
    points: np.ndarray  # (9, 2) pixels
    hand_size: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(9, 2).copy()
        if not np.all(np.isfinite(pts)):
            raise InvariantError("PoseFrame points must be finite")
        if self.hand_size <= 0:
            raise InvariantError("PoseFrame hand_size must be positive")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_keypoints(cls, frame_index: int, kp: HandKeypoints) -> "PoseFrame | None":
        """None when any of the nine skill keypoints is not visible."""
        if not kp.skill_points_visible():
            return None
        idx = [PALM_INDEX, *THUMB_CHAIN, *INDEX_CHAIN]
        return cls(frame_index=frame_index, points=kp.points[idx, :2],
                   hand_size=hand_size(kp.owner_box))


@dataclass(frozen=True, eq=False)
class TieClip:
    """An annotated instrument-tie segment: the unit of skill analysis."""

    video_id: str
    start: int
    end: int
    operator_id: str
    experience: str
    knot_count: int
    left: Trajectory | None = None
    right: Trajectory | None = None
    left_poses: tuple = ()
    right_poses: tuple = ()

    def __post_init__(self):
        if not self.start < self.end:
            raise InvariantError(f"TieClip needs start < end, got [{self.start}, {self.end}]")
        if self.knot_count < 1:
            raise InvariantError(f"TieClip.knot_count must be >= 1, got {self.knot_count}")
        if self.experience not in EXPERIENCE_LEVELS:
            raise InvariantError(
                f"TieClip.experience must be one of {EXPERIENCE_LEVELS}, got {self.experience!r}")

    def trajectory(self, hand: str):
        return self.left if hand == "left" else self.right

    def poses(self, hand: str):
        return self.left_poses if hand == "left" else self.right_poses


@dataclass(frozen=True)
class HandSummary:
    """Per-hand kinematic metrics for one clip; all values non-negative."""

    distance_hand_lengths: float
    distance_per_knot: float
    mean_velocity: float
    max_velocity: float
    mean_acceleration: float
    max_acceleration: float
    mean_jerk: float
    max_jerk: float
    integrated_pose_distance: float
    pose_distance_per_knot: float


@dataclass(frozen=True)
class KinematicSummary:
    video_id: str
    operator_id: str
    experience: str
    knot_count: int
    left: HandSummary | None
    right: HandSummary | None

    def hand(self, name: str) -> HandSummary | None:
        return self.left if name == "left" else self.right


def clip_mean_hand_size(traj: Trajectory) -> float:
    """Mean per-frame hand box size over the clip, in pixels."""
    if len(traj) == 0:
        raise InvariantError("cannot average hand size of an empty trajectory")
    return float(np.mean(traj.sizes))


def path_distance(traj: Trajectory, mean_size: float) -> float:
    """Integrated centroid path length in hand-lengths."""
    if len(traj) < 2:
        warnings.warn("path_distance needs >= 2 samples; returning 0",
                      DataWarning, stacklevel=2)
        return 0.0
    steps = np.linalg.norm(np.diff(traj.centroids, axis=0), axis=1)
    return float(steps.sum() / mean_size)


def velocity_series(traj: Trajectory, mean_size: float, fps: float,
                    per_frame_size: bool = False):
    """Per-step speed in 1/s plus finite-difference acceleration and jerk.

    Speed at step k is |centroid(k+1) - centroid(k)| / size * fps, with size
    the clip mean, or the earlier frame's own hand size when per_frame_size
    is set. Acceleration and jerk multiply by fps once per derivative.
    """
    if len(traj) < 2:
        warnings.warn("velocity_series needs >= 2 samples; returning empty series",
                      DataWarning, stacklevel=2)
        empty = np.zeros(0)
        return empty, empty, empty
    steps = np.linalg.norm(np.diff(traj.centroids, axis=0), axis=1)
    denom = traj.sizes[:-1] if per_frame_size else mean_size
    velocity = steps / denom * fps
    acceleration = np.diff(velocity) * fps
    jerk = np.diff(acceleration) * fps
    return velocity, acceleration, jerk


def pose_vectors(pose: PoseFrame) -> np.ndarray:
    """Eight chain vectors: palm->thumb joints then palm->index joints, (8, 2)."""
    p = pose.points
    thumb = np.diff(p[0:5], axis=0)  # palm, thumb1..4
    index = np.diff(np.vstack([p[0:1], p[5:9]]), axis=0)  # palm, index1..4
    return np.vstack([thumb, index])


def pose_change(p_t: PoseFrame, p_t1: PoseFrame) -> float:
    """Summed L1 distance between corresponding chain vectors, divided by the
    earlier frame's hand size."""
    delta = pose_vectors(p_t1) - pose_vectors(p_t)
    return float(np.abs(delta).sum() / p_t.hand_size)


def integrated_pose_distance(seq) -> float:
    """Sum of pose_change over consecutive frames of one contiguous sequence."""
    seq = list(seq)
    if len(seq) < 2:
        warnings.warn("integrated_pose_distance needs >= 2 pose frames; returning 0",
                      DataWarning, stacklevel=2)
        return 0.0
    return float(sum(pose_change(a, b) for a, b in zip(seq, seq[1:])))


def split_pose_segments(poses, fps: float, max_gap_s: float = POSE_GAP_SPLIT_S):
    """Split a pose sequence wherever consecutive frames are further apart
    than max_gap_s; frames with missing keypoints were already dropped."""
    segments, current = [], []
    max_gap = max_gap_s * fps
    for pose in poses:
        if current and pose.frame_index - current[-1].frame_index > max_gap:
            segments.append(current)
            current = []
        current.append(pose)
    if current:
        segments.append(current)
    return segments


def _summarize_hand(traj, poses, knot_count, fps, per_frame_size):
    if traj is None or len(traj) == 0:
        return None
    mean_size = clip_mean_hand_size(traj)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        dist = path_distance(traj, mean_size)
        vel, acc, jerk = velocity_series(traj, mean_size, fps, per_frame_size)
    pose_total = 0.0
    for segment in split_pose_segments(poses, fps):
        if len(segment) >= 2:
            pose_total += integrated_pose_distance(segment)

    def stats(series):
        if series.size == 0:
            return 0.0, 0.0
        mag = np.abs(series)
        return float(mag.mean()), float(mag.max())

    mean_v, max_v = stats(vel)
    mean_a, max_a = stats(acc)
    mean_j, max_j = stats(jerk)
    return HandSummary(
        distance_hand_lengths=dist,
        distance_per_knot=dist / knot_count,
        mean_velocity=mean_v, max_velocity=max_v,
        mean_acceleration=mean_a, max_acceleration=max_a,
        mean_jerk=mean_j, max_jerk=max_j,
        integrated_pose_distance=pose_total,
        pose_distance_per_knot=pose_total / knot_count,
    )


def summarize_clip(clip: TieClip, fps: float, per_frame_size: bool = False) -> KinematicSummary:
    """All per-hand metrics for one clip; a hand absent from the clip yields
    None rather than zeros."""
    return KinematicSummary(
        video_id=clip.video_id,
        operator_id=clip.operator_id,
        experience=clip.experience,
        knot_count=clip.knot_count,
        left=_summarize_hand(clip.left, clip.left_poses, clip.knot_count, fps, per_frame_size),
        right=_summarize_hand(clip.right, clip.right_poses, clip.knot_count, fps, per_frame_size),
    )


_METRIC_FIELDS = {
    "distance": "distance_hand_lengths",
    "distance_per_knot": "distance_per_knot",
    "pose": "integrated_pose_distance",
    "pose_per_knot": "pose_distance_per_knot",
}


def metric_pair(summary: KinematicSummary, metric: str = "distance"):
    """(left, right) values of the chosen metric, or None when a hand is missing."""
    field_name = _METRIC_FIELDS[metric]
    if summary.left is None or summary.right is None:
        return None
    return (getattr(summary.left, field_name), getattr(summary.right, field_name))


def group_centroids(summaries, metric: str = "distance"):
    """Per-experience mean of (left, right) metric pairs.

    Clips missing either hand are skipped with a warning; a group with no
    usable clips gets no centroid.
    """
    groups = {}
    for summary in summaries:
        pair = metric_pair(summary, metric)
        if pair is None:
            warnings.warn(
                f"clip {summary.video_id}/{summary.operator_id} missing a hand; "
                "skipped in centroid", DataWarning, stacklevel=2)
            continue
        groups.setdefault(summary.experience, []).append(pair)
    return {exp: (float(np.mean([p[0] for p in pairs])), float(np.mean([p[1] for p in pairs])))
            for exp, pairs in groups.items() if pairs}


def leave_one_out(summaries, metric: str = "distance"):
    """Centroids recomputed excluding one operator at a time.

    Returns {operator_id: {experience: centroid}} with exactly one entry per
    operator present in the input; a group emptied by the exclusion is
    reported absent with a warning.
    """
    summaries = list(summaries)
    operators = sorted({s.operator_id for s in summaries})
    results = {}
    for op in operators:
        kept = [s for s in summaries if s.operator_id != op]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            cents = group_centroids(kept, metric)
        for exp in sorted({s.experience for s in summaries}):
            if exp not in cents:
                warnings.warn(f"holding out {op} empties group {exp!r}",
                              DataWarning, stacklevel=2)
        results[op] = cents
    return results
