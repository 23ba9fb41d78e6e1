"""Measurement suite against ground-truth streams: per-second action
precision/recall, detection average precision at a fixed IoU threshold, and
keypoint PCK normalized by hand size.

AP uses all-point interpolation with confidence ties broken by input order;
the PCK threshold alpha defaults to 0.2 and is carried in every report so
numbers are only compared at matched alpha.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataWarning, InvariantError
from .streams import (
    ACTIONS,
    ACTION_LABELS,
    BBox,
    HAND,
    HandKeypoints,
    INDEX_CHAIN,
    THUMB_CHAIN,
    TOOL_CLASSES,
    VideoStream,
    hand_size,
    iou,
)
from .tracking import associate

DEFAULT_PCK_ALPHA = 0.2
DEFAULT_IOU_THRESHOLD = 0.5
KEYPOINT_MATCH_IOU = 0.5  # pairing pred/truth hand instances within a frame


# ------------------------------------------------------------------ actions

@dataclass(frozen=True)
class ActionPRReport:
    precision: dict  # per present class
    recall: dict
    macro_precision: float | None
    macro_recall: float | None
    accuracy: float
    excluded: tuple  # classes absent from both pred and truth


def _labels_of(seq):
    return list(seq.labels) if hasattr(seq, "labels") else list(seq)


def action_precision_recall(pred, truth) -> ActionPRReport:
    """Per-class precision/recall at a fixed temporal resolution.

    The macro means cover the three surgical actions; background is scored as
    a class for confusions but never enters the macro mean. Classes absent
    from both sides are excluded with a flag. Mismatched lengths truncate to
    the shorter side with a warning.
    """
    pred, truth = _labels_of(pred), _labels_of(truth)
    if len(pred) != len(truth):
        warnings.warn(
            f"length mismatch ({len(pred)} vs {len(truth)}); truncating to shorter",
            DataWarning, stacklevel=2)
        n = min(len(pred), len(truth))
        pred, truth = pred[:n], truth[:n]
    if not pred:
        raise InvariantError("cannot score empty sequences")

    tp = {c: 0 for c in ACTION_LABELS}
    fp = {c: 0 for c in ACTION_LABELS}
    fn = {c: 0 for c in ACTION_LABELS}
    hits = 0
    for p, t in zip(pred, truth):
        if p == t:
            tp[p] += 1
            hits += 1
        else:
            fp[p] += 1
            fn[t] += 1

    present = {c for c in ACTION_LABELS if tp[c] + fp[c] + fn[c] > 0}
    excluded = tuple(c for c in ACTION_LABELS if c not in present)
    if excluded:
        warnings.warn(f"classes absent from both pred and truth: {excluded}",
                      DataWarning, stacklevel=2)

    precision, recall = {}, {}
    for c in present:
        precision[c] = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        recall[c] = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] > 0 else 0.0

    scored = [c for c in ACTIONS if c in present]
    macro_p = float(np.mean([precision[c] for c in scored])) if scored else None
    macro_r = float(np.mean([recall[c] for c in scored])) if scored else None
    return ActionPRReport(precision=precision, recall=recall,
                          macro_precision=macro_p, macro_recall=macro_r,
                          accuracy=hits / len(pred), excluded=excluded)


# ------------------------------------------------------------------ boxes

@dataclass
class MatchResult:
    """Pooled per-class detection records for AP computation.

    records[c] holds (confidence, is_true_positive) in pooled input order;
    gt_counts[c] the number of ground-truth instances.
    """

    records: dict = field(default_factory=dict)
    gt_counts: dict = field(default_factory=dict)

    def update(self, other: "MatchResult") -> None:
        for c, recs in other.records.items():
            self.records.setdefault(c, []).extend(recs)
        for c, n in other.gt_counts.items():
            self.gt_counts[c] = self.gt_counts.get(c, 0) + n

    def merge(self, other: "MatchResult") -> "MatchResult":
        out = MatchResult(records={k: list(v) for k, v in self.records.items()},
                          gt_counts=dict(self.gt_counts))
        out.update(other)
        return out


def _greedy_match_class(preds, truth_boxes, iou_thresh):
    """Greedy confidence-ordered matching for one class in one frame.

    preds: (confidence, BBox) pairs. Returns (conf, is_tp) records in
    confidence order with input-order tie-breaking.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
    taken = [False] * len(truth_boxes)
    records = []
    for i in order:
        conf, box = preds[i]
        best_v, best_j = -1.0, None
        for j, gt in enumerate(truth_boxes):
            if taken[j]:
                continue
            v = iou(box, gt)
            if v > best_v:
                best_v, best_j = v, j
        if best_j is not None and best_v >= iou_thresh:
            taken[best_j] = True
            records.append((conf, True))
        else:
            records.append((conf, False))
    return records


def match_detections(pred_dets, truth_dets, iou_thresh=DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Match one frame's detections against its ground truth, per class."""
    result = MatchResult()
    for c in (HAND,) + TOOL_CLASSES:
        preds = [(d.confidence, d.box) for d in pred_dets if d.category == c]
        gts = [d.box for d in truth_dets if d.category == c]
        if gts:
            result.gt_counts[c] = result.gt_counts.get(c, 0) + len(gts)
        if preds:
            result.records.setdefault(c, []).extend(
                _greedy_match_class(preds, gts, iou_thresh))
    return result


def ap_from_records(records, n_gt) -> float:
    """Area under the precision-recall curve, all-point interpolation."""
    if n_gt <= 0:
        raise InvariantError("AP undefined without ground truth")
    if not records:
        return 0.0
    order = sorted(range(len(records)), key=lambda i: (-records[i][0], i))
    tp_flags = np.array([1.0 if records[i][1] else 0.0 for i in order])
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(1.0 - tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev = 0.0
    for r, p in zip(recall, envelope):
        if r > prev:
            ap += (r - prev) * p
            prev = r
    return float(ap)


def average_precision(preds, truth, category, iou_thresh=DEFAULT_IOU_THRESHOLD):
    """AP for one class over one pooled collection of detections.

    preds: Detections (confidence required); truth: ground-truth BBoxes of
    the class. Returns None (undefined) when there is no ground truth.
    """
    gts = list(truth)
    dets = [(d.confidence, d.box) for d in preds if d.category == category]
    if not gts:
        if dets:
            warnings.warn(f"no ground truth for {category}; AP undefined",
                          DataWarning, stacklevel=2)
        return None
    records = _greedy_match_class(dets, gts, iou_thresh)
    return ap_from_records(records, len(gts))


def mean_ap(per_class_aps) -> float | None:
    """Arithmetic mean of the defined APs; None when none are defined."""
    defined = [v for v in per_class_aps.values() if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


# ------------------------------------------------------------------ keypoints

@dataclass(frozen=True)
class PckResult:
    hits: np.ndarray  # (21,) bool
    valid: np.ndarray  # (21,) bool, visible ground-truth keypoints
    mean: float | None  # fraction correct over valid points


def pck(pred_kps: HandKeypoints, truth_kps: HandKeypoints, ref_box: BBox,
        alpha: float = DEFAULT_PCK_ALPHA) -> PckResult:
    """Per-keypoint correctness: within alpha * hand_size(ref_box) of truth.

    Invisible ground-truth keypoints are excluded from the denominator.
    """
    thresh = alpha * hand_size(ref_box)
    dists = np.linalg.norm(pred_kps.xy - truth_kps.xy, axis=1)
    valid = truth_kps.visible
    hits = (dists <= thresh) & valid
    mean = float(hits.sum() / valid.sum()) if valid.any() else None
    return PckResult(hits=hits, valid=valid, mean=mean)


@dataclass
class PckAggregate:
    """Pooled per-keypoint PCK over a test set."""

    hit_counts: np.ndarray = field(default_factory=lambda: np.zeros(21))
    valid_counts: np.ndarray = field(default_factory=lambda: np.zeros(21))

    def add(self, result: PckResult):
        self.hit_counts += result.hits
        self.valid_counts += result.valid

    def add_missed_instance(self, truth_kps: HandKeypoints):
        """Ground-truth hand with no matching prediction: all visible points miss."""
        self.valid_counts += truth_kps.visible

    def per_keypoint(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.hit_counts / self.valid_counts
        return [float(v) if np.isfinite(v) else None for v in out]

    def _group_mean(self, indices):
        valid = self.valid_counts[list(indices)].sum()
        if valid == 0:
            return None
        return float(self.hit_counts[list(indices)].sum() / valid)

    def mean(self):
        return self._group_mean(range(21))

    def thumb_mean(self):
        return self._group_mean(THUMB_CHAIN)

    def index_mean(self):
        return self._group_mean(INDEX_CHAIN)


# ------------------------------------------------------------------ reports

@dataclass
class MetricReport:
    """One evaluation report; every populated metric lies in [0, 1]."""

    strata: dict = field(default_factory=dict)
    alpha: float | None = None
    iou_threshold: float | None = None
    action_precision: dict | None = None
    action_recall: dict | None = None
    macro_precision: float | None = None
    macro_recall: float | None = None
    accuracy: float | None = None
    ap_per_class: dict | None = None
    hand_ap: float | None = None
    tool_map: float | None = None
    pck_per_keypoint: list | None = None
    mean_pck: float | None = None
    thumb_pck: float | None = None
    index_pck: float | None = None

    def __post_init__(self):
        for value in self._scalar_metrics():
            if value is not None and not (-1e-9 <= value <= 1 + 1e-9):
                raise InvariantError(f"metric out of [0,1]: {value}")

    def _scalar_metrics(self):
        out = [self.macro_precision, self.macro_recall, self.accuracy,
               self.hand_ap, self.tool_map, self.mean_pck, self.thumb_pck,
               self.index_pck]
        for d in (self.action_precision, self.action_recall, self.ap_per_class):
            if d:
                out.extend(v for v in d.values() if v is not None)
        if self.pck_per_keypoint:
            out.extend(v for v in self.pck_per_keypoint if v is not None)
        return out

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _stream_action_labels(stream: VideoStream, resolution_s: float = 1.0):
    from .signatures import action_sequence_from_stream
    return action_sequence_from_stream(stream, resolution_s).labels


def evaluate_actions(pred_stream: VideoStream, truth_stream: VideoStream,
                     resolution_s: float = 1.0) -> MetricReport:
    report = action_precision_recall(
        _stream_action_labels(pred_stream, resolution_s),
        _stream_action_labels(truth_stream, resolution_s))
    return MetricReport(
        strata=dict(truth_stream.metadata.get("strata", {})),
        action_precision=report.precision, action_recall=report.recall,
        macro_precision=report.macro_precision, macro_recall=report.macro_recall,
        accuracy=report.accuracy)


def evaluate_boxes(pred_stream: VideoStream, truth_stream: VideoStream,
                   iou_thresh: float = DEFAULT_IOU_THRESHOLD) -> MetricReport:
    """Frame-aligned detection AP per class; hands reported separately from
    the tool mAP."""
    truth_by_frame = {fr.frame_index: fr for fr in truth_stream.frames}
    pred_frames = {fr.frame_index for fr in pred_stream.frames}
    pooled = MatchResult()
    for fr in pred_stream.frames:
        gt = truth_by_frame.get(fr.frame_index)
        pooled.update(match_detections(
            fr.detections, gt.detections if gt else (), iou_thresh))
    for fr in truth_stream.frames:  # ground truth on frames with no predictions
        if fr.frame_index not in pred_frames:
            pooled.update(match_detections((), fr.detections, iou_thresh))
    aps = {}
    for c in (HAND,) + TOOL_CLASSES:
        n_gt = pooled.gt_counts.get(c, 0)
        if n_gt == 0:
            if pooled.records.get(c):
                warnings.warn(f"no ground truth for {c}; AP undefined",
                              DataWarning, stacklevel=2)
            aps[c] = None
        else:
            aps[c] = ap_from_records(pooled.records.get(c, []), n_gt)
    return MetricReport(
        strata=dict(truth_stream.metadata.get("strata", {})),
        iou_threshold=iou_thresh, ap_per_class=aps, hand_ap=aps[HAND],
        tool_map=mean_ap({c: aps[c] for c in TOOL_CLASSES}))


def evaluate_keypoints(pred_stream: VideoStream, truth_stream: VideoStream,
                       alpha: float = DEFAULT_PCK_ALPHA,
                       ref: str = "truth") -> MetricReport:
    """Pooled PCK over all frames.

    Hand instances are paired within each frame by owner-box IoU; unmatched
    ground-truth hands count their visible keypoints as misses. `ref` selects
    the normalizing box: the ground-truth owner box ("truth") or the detected
    owner box ("pred").
    """
    if ref not in ("truth", "pred"):
        raise InvariantError(f"ref must be 'truth' or 'pred', got {ref!r}")
    truth_by_frame = {fr.frame_index: fr for fr in truth_stream.frames}
    agg = PckAggregate()
    for fr in pred_stream.frames:
        gt = truth_by_frame.get(fr.frame_index)
        if gt is None:
            continue
        preds, truths = list(fr.keypoints), list(gt.keypoints)
        matches, _, unmatched_truth = associate(
            [k.owner_box for k in preds], [k.owner_box for k in truths],
            KEYPOINT_MATCH_IOU)
        for pi, ti in matches:
            ref_box = truths[ti].owner_box if ref == "truth" else preds[pi].owner_box
            agg.add(pck(preds[pi], truths[ti], ref_box, alpha))
        for ti in unmatched_truth:
            agg.add_missed_instance(truths[ti])
    return MetricReport(
        strata=dict(truth_stream.metadata.get("strata", {})),
        alpha=alpha, pck_per_keypoint=agg.per_keypoint(), mean_pck=agg.mean(),
        thumb_pck=agg.thumb_mean(), index_pck=agg.index_mean())


def group_reports_by_strata(reports):
    """Group MetricReports by each (tag, value) stratum label plus 'all'."""
    grouped = {"all": list(reports)}
    for report in reports:
        for key, value in report.strata.items():
            grouped.setdefault(f"{key}={value}", []).append(report)
    return grouped
