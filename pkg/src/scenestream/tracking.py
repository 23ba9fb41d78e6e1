"""SORT-style tracking of hand detections.

Constant-velocity Kalman filters over (center, area, aspect) box states,
IoU-cost optimal assignment per frame, and a birth/death lifecycle. Only
hand-category detections are tracked; tools are reported per frame elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvariantError
from .streams import BBox, FrameRecord, HAND, iou

STATE_DIM = 7  # (u, v, s, r, du, dv, ds); r has no velocity
MEAS_DIM = 4

_F = np.eye(STATE_DIM)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.zeros((MEAS_DIM, STATE_DIM))
_H[0, 0] = _H[1, 1] = _H[2, 2] = _H[3, 3] = 1.0

_AREA_EPS = 1e-6
_COV_ASYM_TOL = 1e-9


@dataclass(frozen=True)
class TrackerConfig:
    iou_threshold: float = 0.3
    max_age: int = 30  # frames a track survives unmatched; 1 s at 30 fps
    min_hits: int = 3
    process_noise: float = 1.0
    measurement_noise: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.iou_threshold < 1.0):
            raise InvariantError(f"iou_threshold must be in (0,1), got {self.iou_threshold}")
        if self.max_age <= 0 or self.min_hits <= 0:
            raise InvariantError("max_age and min_hits must be positive")
        if self.process_noise <= 0 or self.measurement_noise <= 0:
            raise InvariantError("noise scales must be positive")

    def process_cov(self) -> np.ndarray:
        q = np.ones(STATE_DIM)
        q[4:] = 0.01
        q[6] = 1e-4
        return np.diag(q) * self.process_noise

    def measurement_cov(self) -> np.ndarray:
        return np.diag([1.0, 1.0, 10.0, 10.0]) * self.measurement_noise


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray  # (7,)
    covariance: np.ndarray  # (7,7) symmetric PSD

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        cov = np.asarray(self.covariance, dtype=float).copy()
        if mean.shape != (STATE_DIM,) or cov.shape != (STATE_DIM, STATE_DIM):
            raise InvariantError("KalmanState needs a 7-vector mean and 7x7 covariance")
        if np.max(np.abs(cov - cov.T)) > _COV_ASYM_TOL:
            raise InvariantError("KalmanState.covariance must be symmetric")
        if mean[2] <= 0 or mean[3] <= 0:
            raise InvariantError("KalmanState scale and aspect ratio must stay positive")
        cov = (cov + cov.T) / 2.0
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True, eq=False)
class Track:
    track_id: int
    state: KalmanState
    hits: int = 1
    age: int = 0
    time_since_update: int = 0
    history: tuple = ()  # (frame_index, BBox) pairs, strictly increasing
    degenerate: bool = False

    def box(self) -> BBox:
        return measurement_to_box(self.state.mean[:MEAS_DIM])


def box_to_measurement(box: BBox) -> np.ndarray:
    u, v = (box.x_min + box.x_max) / 2.0, (box.y_min + box.y_max) / 2.0
    w, h = box.width, box.height
    return np.array([u, v, w * h, w / h])


def measurement_to_box(z) -> BBox:
    u, v, s, r = (float(x) for x in z)
    w = math.sqrt(max(s, _AREA_EPS) * max(r, _AREA_EPS))
    h = max(s, _AREA_EPS) / w
    return BBox(max(u - w / 2.0, 0.0), max(v - h / 2.0, 0.0), u + w / 2.0, v + h / 2.0)


def new_track(track_id: int, box: BBox, frame_index: int, config: TrackerConfig) -> Track:
    mean = np.zeros(STATE_DIM)
    mean[:MEAS_DIM] = box_to_measurement(box)
    cov = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])
    state = KalmanState(mean=mean, covariance=cov)
    return Track(track_id=track_id, state=state, history=((frame_index, box),))


def predict(track: Track, config: TrackerConfig) -> Track:
    """Advance one frame under constant-velocity dynamics and grow covariance."""
    mean = _F @ track.state.mean
    cov = _F @ track.state.covariance @ _F.T + config.process_cov()
    degenerate = track.degenerate
    if mean[2] <= 0:
        mean[2] = _AREA_EPS
        degenerate = True
    state = KalmanState(mean=mean, covariance=cov)
    return replace(track, state=state, age=track.age + 1,
                   time_since_update=track.time_since_update + 1, degenerate=degenerate)


def update(track: Track, det: BBox, config: TrackerConfig, frame_index: int | None = None) -> Track:
    """Kalman measurement update from a matched detection box.

    Raises InvariantError on a singular innovation covariance; the tracker
    drops such tracks.
    """
    x, p = track.state.mean, track.state.covariance
    r_cov = config.measurement_cov()
    innovation_cov = _H @ p @ _H.T + r_cov
    try:
        gain = np.linalg.solve(innovation_cov, _H @ p).T  # (7,4)
    except np.linalg.LinAlgError as exc:
        raise InvariantError("singular innovation covariance") from exc
    if not np.all(np.isfinite(gain)):
        raise InvariantError("singular innovation covariance")
    z = box_to_measurement(det)
    mean = x + gain @ (z - _H @ x)
    ikh = np.eye(STATE_DIM) - gain @ _H
    cov = ikh @ p @ ikh.T + gain @ r_cov @ gain.T  # Joseph form keeps PSD
    degenerate = track.degenerate
    if mean[2] <= 0:
        mean[2] = _AREA_EPS
        degenerate = True
    if mean[3] <= 0:
        mean[3] = _AREA_EPS
        degenerate = True
    state = KalmanState(mean=mean, covariance=cov)
    if frame_index is None:
        frame_index = track.history[-1][0] + 1 if track.history else 0
    history = track.history + ((frame_index, measurement_to_box(mean[:MEAS_DIM])),)
    return replace(track, state=state, hits=track.hits + 1, time_since_update=0,
                   history=history, degenerate=degenerate)


def _max_total(score: np.ndarray) -> float:
    if score.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(-score)
    return float(score[rows, cols].sum())


def _lexmin_optimal_pairs(score: np.ndarray, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Max-total assignment; ties break toward the lexicographically smallest
    (row, col) pair list so repeated runs and reimplementations agree."""
    n, m = score.shape
    best = _max_total(score)
    pairs = []
    rows_left = list(range(1, n))
    cols_left = list(range(m))
    base = 0.0
    for i in range(n):
        chosen = None
        for j in cols_left:
            rest = score[np.ix_(rows_left, [c for c in cols_left if c != j])]
            if base + score[i, j] + _max_total(rest) >= best - tol:
                chosen = j
                break
        if chosen is not None:
            pairs.append((i, chosen))
            cols_left.remove(chosen)
            base += score[i, chosen]
        if rows_left:
            rows_left.pop(0)
    return pairs


def associate(track_boxes, det_boxes, iou_threshold):
    """Optimal one-to-one IoU matching between predicted boxes and detections.

    Returns (matches, unmatched_tracks, unmatched_dets); matches maximize the
    total IoU, then pairs with IoU < iou_threshold are dissolved.
    """
    n, m = len(track_boxes), len(det_boxes)
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    score = np.array([[iou(t, d) for d in det_boxes] for t in track_boxes])
    pairs = _lexmin_optimal_pairs(score)
    matches = [(i, j) for i, j in pairs if score[i, j] >= iou_threshold]
    matched_t = {i for i, _ in matches}
    matched_d = {j for _, j in matches}
    return (matches,
            [i for i in range(n) if i not in matched_t],
            [j for j in range(m) if j not in matched_d])


class SortTracker:
    """Stateful per-video tracker; feed frames in order through step()."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self.frame_count = 0
        self._next_id = 1

    def step(self, frame: FrameRecord) -> list[tuple[int, BBox]]:
        """Advance one frame; returns (track_id, box) pairs sorted by id.

        Only tracks matched this frame are emitted, once they have min_hits
        updates (always, while the stream itself is younger than min_hits).
        Boxes are clamped to non-negative coordinates; tracks fully outside
        the frame emit nothing.
        """
        self.frame_count += 1
        dets = [d.box for d in frame.detections if d.category == HAND]

        predicted = [predict(tr, self.config) for tr in self.tracks]
        matches, _, unmatched_dets = associate(
            [tr.box() for tr in predicted], dets, self.config.iou_threshold)
        det_for_track = dict(matches)

        survivors: list[Track] = []
        for idx, tr in enumerate(predicted):
            if idx in det_for_track:
                try:
                    survivors.append(update(tr, dets[det_for_track[idx]], self.config,
                                            frame.frame_index))
                except InvariantError:
                    continue  # singular innovation: drop the track
            elif tr.time_since_update <= self.config.max_age:
                survivors.append(tr)
        for j in unmatched_dets:
            survivors.append(new_track(self._next_id, dets[j], frame.frame_index, self.config))
            self._next_id += 1
        self.tracks = survivors

        emitted = []
        for tr in self.tracks:
            if tr.time_since_update != 0:
                continue
            if tr.hits >= self.config.min_hits or self.frame_count <= self.config.min_hits:
                try:
                    emitted.append((tr.track_id, tr.box()))
                except InvariantError:
                    continue  # fully outside the frame after clamping
        emitted.sort(key=lambda pair: pair[0])
        return emitted
