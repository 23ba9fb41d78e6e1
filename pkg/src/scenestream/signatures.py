"""Procedure timelines, aggregate surgical signatures, the 30-feature
parameterization, and the LDA projection separating procedure classes.

A procedure is reduced to an action sequence and a tool-count sequence at a
fixed temporal resolution (5 s by default). After background excision the
sequence is summarized per quartile, transition probabilities are added, and
the resulting 30 features feed a regularized two-discriminant LDA.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DataWarning, InvariantError
from .streams import ACTIONS, ACTION_LABELS, BACKGROUND, TOOL_CLASSES, VideoStream

DEFAULT_RESOLUTION_S = 5.0
N_QUARTILES = 4
SIGNATURE_GRID = 100  # normalized-time samples per signature curve
DEFAULT_SMOOTHING_WINDOW = 5  # steps; must be odd

# ordered action pairs for the six transition features
TRANSITION_PAIRS = tuple((a, b) for a in ACTIONS for b in ACTIONS if a != b)

FEATURE_NAMES = (
    tuple(f"{action}_q{q + 1}" for action in ACTIONS for q in range(N_QUARTILES))
    + tuple(f"{tool}_q{q + 1}" for tool in TOOL_CLASSES for q in range(N_QUARTILES))
    + tuple(f"p_{a}_to_{b}" for a, b in TRANSITION_PAIRS)
)
N_FEATURES = len(FEATURE_NAMES)  # 30


@dataclass(frozen=True, eq=False)
class ActionSequence:
    """Action labels at a fixed temporal resolution for one video."""

    video_id: str
    labels: tuple
    resolution_s: float = DEFAULT_RESOLUTION_S

    def __post_init__(self):
        if self.resolution_s <= 0:
            raise InvariantError(f"resolution_s must be > 0, got {self.resolution_s}")
        labels = tuple(self.labels)
        for lab in labels:
            if lab not in ACTION_LABELS:
                raise InvariantError(f"unknown action label {lab!r}")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class ToolSequence:
    """Per-step mean detection count for each tool class."""

    video_id: str
    counts: np.ndarray  # (n_steps, 3) in TOOL_CLASSES order
    resolution_s: float = DEFAULT_RESOLUTION_S

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float).reshape(-1, len(TOOL_CLASSES)).copy()
        if self.resolution_s <= 0:
            raise InvariantError(f"resolution_s must be > 0, got {self.resolution_s}")
        if np.any(counts < 0):
            raise InvariantError("tool counts must be >= 0")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.counts)


def action_sequence_from_stream(stream: VideoStream, resolution_s: float = DEFAULT_RESOLUTION_S):
    """Majority action label per resolution window; unlabeled windows are background."""
    n_steps = max(1, int(np.ceil(stream.duration_s / resolution_s)))
    votes = [dict() for _ in range(n_steps)]
    for fr in stream.frames:
        if fr.action is None:
            continue
        step = min(int(fr.timestamp_s / resolution_s), n_steps - 1)
        votes[step][fr.action] = votes[step].get(fr.action, 0) + 1
    labels = []
    for v in votes:
        if not v:
            labels.append(BACKGROUND)
        else:
            # ties break by the canonical label order for determinism
            labels.append(max(ACTION_LABELS, key=lambda lab: v.get(lab, 0)))
    return ActionSequence(video_id=stream.video_id, labels=tuple(labels),
                          resolution_s=resolution_s)


def tool_sequence_from_stream(stream: VideoStream, resolution_s: float = DEFAULT_RESOLUTION_S):
    """Mean per-frame count of each tool class within each resolution window."""
    n_steps = max(1, int(np.ceil(stream.duration_s / resolution_s)))
    totals = np.zeros((n_steps, len(TOOL_CLASSES)))
    frames_per_step = np.zeros(n_steps)
    tool_index = {t: k for k, t in enumerate(TOOL_CLASSES)}
    for fr in stream.frames:
        step = min(int(fr.timestamp_s / resolution_s), n_steps - 1)
        frames_per_step[step] += 1
        for det in fr.detections:
            k = tool_index.get(det.category)
            if k is not None:
                totals[step, k] += 1
    counts = np.divide(totals, frames_per_step[:, None],
                       out=np.zeros_like(totals), where=frames_per_step[:, None] > 0)
    return ToolSequence(video_id=stream.video_id, counts=counts, resolution_s=resolution_s)


def background_mask(seq: ActionSequence) -> np.ndarray:
    """Boolean mask of steps to keep after background excision."""
    return np.array([lab != BACKGROUND for lab in seq.labels], dtype=bool)


def excise_background(seq: ActionSequence) -> ActionSequence:
    """Remove background steps, concatenating the rest in order."""
    kept = tuple(lab for lab in seq.labels if lab != BACKGROUND)
    if not kept:
        warnings.warn(f"sequence {seq.video_id} is all background after excision",
                      DataWarning, stacklevel=2)
    return ActionSequence(video_id=seq.video_id, labels=kept, resolution_s=seq.resolution_s)


def excise_tool_steps(tool_seq: ToolSequence, mask: np.ndarray) -> ToolSequence:
    """Apply an action-sequence background mask to the aligned tool sequence."""
    if len(mask) != len(tool_seq):
        raise InvariantError(
            f"mask length {len(mask)} does not match tool sequence length {len(tool_seq)}")
    return ToolSequence(video_id=tool_seq.video_id, counts=tool_seq.counts[mask],
                        resolution_s=tool_seq.resolution_s)


def quartile_spans(n: int):
    """Four contiguous spans; earlier quartiles absorb the remainder."""
    base, rem = divmod(n, N_QUARTILES)
    sizes = [base + (1 if q < rem else 0) for q in range(N_QUARTILES)]
    spans, start = [], 0
    for size in sizes:
        spans.append((start, start + size))
        start += size
    return spans


def quartile_aggregate(seq) -> np.ndarray:
    """Per-quartile class means, shape (4, 3).

    For an ActionSequence: the fraction of steps carrying each surgical
    action. For a ToolSequence: the mean per-step count of each tool class.
    Sequences shorter than 4 steps leave trailing quartiles empty (zeros,
    with a warning).
    """
    n = len(seq)
    if n == 0:
        raise InvariantError("cannot aggregate an empty sequence")
    if n < N_QUARTILES:
        warnings.warn(f"sequence of {n} steps leaves {N_QUARTILES - n} empty quartiles",
                      DataWarning, stacklevel=2)
    if isinstance(seq, ActionSequence):
        rows = np.array([[1.0 if lab == a else 0.0 for a in ACTIONS] for lab in seq.labels])
    else:
        rows = seq.counts
    out = np.zeros((N_QUARTILES, rows.shape[1]))
    for q, (lo, hi) in enumerate(quartile_spans(n)):
        if hi > lo:
            out[q] = rows[lo:hi].mean(axis=0)
    return out


def _moving_average(curves: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average along axis 0 with truncated edge windows."""
    if window < 1 or window % 2 == 0:
        raise InvariantError(f"smoothing window must be odd and >= 1, got {window}")
    if window == 1:
        return curves.copy()
    half = window // 2
    n = len(curves)
    out = np.empty_like(curves, dtype=float)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = curves[lo:hi].mean(axis=0)
    return out


@dataclass(frozen=True, eq=False)
class SurgicalSignature:
    """Aggregate per-procedure-class profile over normalized time [0, 1]."""

    action_curves: np.ndarray  # (grid, 3) smoothed action probabilities
    tool_curves: np.ndarray  # (grid, 3) smoothed mean tool counts
    action_quartiles: np.ndarray  # (4, 3) cohort-mean quartile fractions
    tool_quartiles: np.ndarray  # (4, 3) cohort-mean quartile counts
    window: int
    n_procedures: int

    def __post_init__(self):
        curves = np.asarray(self.action_curves, dtype=float)
        if np.any(curves < -1e-9) or np.any(curves > 1 + 1e-9):
            raise InvariantError("action probabilities must lie in [0,1]")
        if np.any(curves.sum(axis=1) > 1 + 1e-9):
            raise InvariantError("action probabilities must sum to <= 1 per time point")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, len(self.action_curves))


def _resample_indicators(seq: ActionSequence, grid: int) -> np.ndarray:
    n = len(seq)
    idx = np.minimum((np.arange(grid) * n) // grid, n - 1)
    return np.array([[1.0 if seq.labels[i] == a else 0.0 for a in ACTIONS] for i in idx])


def _resample_counts(tool_seq: ToolSequence, grid: int) -> np.ndarray:
    n = len(tool_seq)
    idx = np.minimum((np.arange(grid) * n) // grid, n - 1)
    return tool_seq.counts[idx]


def build_signature(seqs, tool_seqs=None, window: int = DEFAULT_SMOOTHING_WINDOW,
                    grid: int = SIGNATURE_GRID) -> SurgicalSignature:
    """Average time-normalized class indicators across procedures and smooth.

    Every sequence is resampled onto a common [0, 1] grid, class indicators
    are averaged pointwise across procedures, and a centered moving average
    of odd `window` (truncated at the edges) smooths each curve.
    """
    seqs = list(seqs)
    if not seqs:
        raise InvariantError("build_signature needs at least one procedure")
    empty = [s.video_id for s in seqs if len(s) == 0]
    if empty:
        raise InvariantError(f"empty sequences cannot enter a signature: {empty}")
    action_stack = np.stack([_resample_indicators(s, grid) for s in seqs])
    action_curves = _moving_average(action_stack.mean(axis=0), window)
    action_quart = np.stack([quartile_aggregate(s) for s in seqs]).mean(axis=0)

    if tool_seqs:
        tool_seqs = list(tool_seqs)
        tool_stack = np.stack([_resample_counts(t, grid) for t in tool_seqs])
        tool_curves = _moving_average(tool_stack.mean(axis=0), window)
        tool_quart = np.stack([quartile_aggregate(t) for t in tool_seqs]).mean(axis=0)
    else:
        tool_curves = np.zeros((grid, len(TOOL_CLASSES)))
        tool_quart = np.zeros((N_QUARTILES, len(TOOL_CLASSES)))

    return SurgicalSignature(action_curves=action_curves, tool_curves=tool_curves,
                             action_quartiles=action_quart, tool_quartiles=tool_quart,
                             window=window, n_procedures=len(seqs))


def transition_probabilities(seq: ActionSequence) -> np.ndarray:
    """Six ordered-pair transition probabilities over the run-collapsed sequence.

    Rows normalize by total transitions out of each action, so outgoing
    probabilities from every present action sum to 1; absent actions
    contribute zeros. Input must be background-excised.
    """
    if any(lab == BACKGROUND for lab in seq.labels):
        raise InvariantError("transition_probabilities needs a background-excised sequence")
    runs = [lab for k, lab in enumerate(seq.labels) if k == 0 or lab != seq.labels[k - 1]]
    if len(runs) < 2:
        warnings.warn(f"sequence {seq.video_id} has fewer than 2 runs; transitions all zero",
                      DataWarning, stacklevel=2)
        return np.zeros(len(TRANSITION_PAIRS))
    counts = {pair: 0 for pair in TRANSITION_PAIRS}
    for a, b in zip(runs, runs[1:]):
        counts[(a, b)] += 1
    out = np.zeros(len(TRANSITION_PAIRS))
    for k, (a, b) in enumerate(TRANSITION_PAIRS):
        total_out = sum(counts[(a, c)] for c in ACTIONS if c != a)
        if total_out > 0:
            out[k] = counts[(a, b)] / total_out
    return out


@dataclass(frozen=True, eq=False)
class FeatureVector30:
    """30 interpretable per-procedure features in FEATURE_NAMES order."""

    video_id: str
    values: np.ndarray  # (30,)
    label: str | None = None  # procedure class, when known

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.shape != (N_FEATURES,):
            raise InvariantError(f"expected {N_FEATURES} features, got shape {values.shape}")
        quart_actions = values[:12]
        transitions = values[24:]
        if np.any(quart_actions < -1e-9) or np.any(quart_actions > 1 + 1e-9):
            raise InvariantError("quartile action features must lie in [0,1]")
        if np.any(transitions < -1e-9) or np.any(transitions > 1 + 1e-9):
            raise InvariantError("transition features must lie in [0,1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def featurize(seq: ActionSequence, tool_seq: ToolSequence, label: str | None = None):
    """24 quartile features plus 6 transition features, in FEATURE_NAMES order.

    Expects background-excised, aligned sequences. Tool features are raw
    per-step mean counts here; normalize_tool_features rescales them to [0,1]
    across a cohort.
    """
    action_quart = quartile_aggregate(seq)  # (4, 3)
    tool_quart = quartile_aggregate(tool_seq)  # (4, 3)
    transitions = transition_probabilities(seq)
    values = np.concatenate([action_quart.T.ravel(), tool_quart.T.ravel(), transitions])
    return FeatureVector30(video_id=seq.video_id, values=values, label=label)


def normalize_tool_features(features) -> list:
    """Min-max normalize the 12 tool columns across the cohort, into [0,1].

    Constant columns pass through as zeros with a warning.
    """
    features = list(features)
    if not features:
        return []
    table = np.stack([f.values for f in features])
    tool_cols = slice(12, 24)
    block = table[:, tool_cols]
    lo, hi = block.min(axis=0), block.max(axis=0)
    span = hi - lo
    flat = span <= 0
    if np.any(flat):
        names = [FEATURE_NAMES[12 + int(i)] for i in np.flatnonzero(flat)]
        warnings.warn(f"constant tool features set to 0: {names}", DataWarning, stacklevel=2)
    span = np.where(flat, 1.0, span)
    table[:, tool_cols] = np.where(flat, 0.0, (block - lo) / span)
    return [FeatureVector30(video_id=f.video_id, values=row, label=f.label)
            for f, row in zip(features, table)]


def zscore(features):
    """Standardize each dimension to zero mean and unit standard deviation.

    Returns (matrix, mean, sd); zero-variance dimensions pass through as 0
    with a warning. Needs at least 2 samples.
    """
    if isinstance(features, np.ndarray):
        table = np.asarray(features, dtype=float)
    else:
        table = np.stack([f.values for f in features])
    if len(table) < 2:
        raise InvariantError("zscore needs at least 2 samples")
    mean = table.mean(axis=0)
    sd = table.std(axis=0)
    flat = sd <= 0
    if np.any(flat):
        warnings.warn(f"{int(flat.sum())} constant feature dimensions standardized to 0",
                      DataWarning, stacklevel=2)
    safe_sd = np.where(flat, 1.0, sd)
    z = (table - mean) / safe_sd
    z[:, flat] = 0.0
    return z, mean, sd


@dataclass(frozen=True, eq=False)
class LdaModel:
    """Two-discriminant projection fit on standardized features."""

    projection: np.ndarray  # (n_features, 2), unit-norm columns
    eigenvalues: np.ndarray  # all generalized eigenvalues, descending
    mean: np.ndarray  # training mean subtracted before projecting
    classes: tuple
    class_centroids: np.ndarray  # (n_classes, 2) projected class means
    shrinkage: float


def _scatter_matrices(x: np.ndarray, labels):
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    mean = x.mean(axis=0)
    d = x.shape[1]
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for c in classes:
        xc = x[labels == c]
        mu = xc.mean(axis=0)
        centered = xc - mu
        s_w += centered.T @ centered
        diff = (mu - mean)[:, None]
        s_b += len(xc) * (diff @ diff.T)
    return s_w, s_b, classes, mean


def lda_fit(x: np.ndarray, labels) -> LdaModel:
    """Fit the two top discriminants of the generalized eigenproblem
    S_B w = lambda (S_W + gamma I) w.

    Requires at least 3 classes with at least 2 samples each. The shrinkage
    gamma = 1e-3 * trace(S_W) / n_features keeps S_W invertible when features
    outnumber per-class samples. Eigenvectors are unit length with the
    largest-magnitude entry made positive.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 3:
        raise InvariantError(f"lda_fit needs >= 3 classes, got {len(classes)}")
    for c in classes:
        if int((labels == c).sum()) < 2:
            raise InvariantError(f"class {c!r} has fewer than 2 samples")
    s_w, s_b, classes, mean = _scatter_matrices(x, labels)
    trace = float(np.trace(s_w))
    if trace <= 0:
        raise InvariantError("all samples identical; within-class scatter is zero")
    gamma = 1e-3 * trace / x.shape[1]
    s_w_reg = s_w + gamma * np.eye(x.shape[1])

    eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w_reg)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    top = eigvecs[:, order[:2]]
    for k in range(2):
        vec = top[:, k]
        vec = vec / np.linalg.norm(vec)
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        top[:, k] = vec

    projected_means = np.stack([
        (x[labels == c].mean(axis=0) - mean) @ top for c in classes])
    return LdaModel(projection=top, eigenvalues=eigvals, mean=mean,
                    classes=tuple(classes), class_centroids=projected_means,
                    shrinkage=gamma)


def lda_project(x: np.ndarray, model: LdaModel) -> np.ndarray:
    """Project (already standardized) features onto the two discriminants."""
    x = np.asarray(x, dtype=float)
    return (x - model.mean) @ model.projection


def top_features(model: LdaModel, axis: int, k: int = 3):
    """The k feature names weighted most heavily on one projection axis."""
    weights = model.projection[:, axis]
    order = np.argsort(-np.abs(weights))
    return [(FEATURE_NAMES[i], float(weights[i])) for i in order[:k]]


@dataclass(frozen=True)
class FilterRule:
    """Metadata predicate selecting mostly-complete procedure videos."""

    name: str
    umls_substring: str
    search_substring: str
    min_duration_s: float = 120.0
    max_duration_s: float = 1800.0
    title_predicate: object = None  # callable(title: str) -> bool, or None


def _appendectomy_title(title: str) -> bool:
    return "append" in title


def _pilonidal_title(title: str) -> bool:
    return "karydakis" in title or (("pilon" in title or "perin" in title) and "flap" in title)


BUILTIN_RULES = {
    "appendectomy": FilterRule(name="appendectomy", umls_substring="append",
                               search_substring="append", title_predicate=_appendectomy_title),
    "pilonidal": FilterRule(name="pilonidal", umls_substring="flap",
                            search_substring="pilonidal", title_predicate=_pilonidal_title),
    # title screening for thyroidectomy is a manual review step, not automated
    "thyroidectomy": FilterRule(name="thyroidectomy", umls_substring="thyroid",
                                search_substring="thyroid", title_predicate=None),
}


def filter_videos(catalog, rule: FilterRule):
    """Select video ids whose metadata passes every clause of the rule.

    Each catalog entry is a mapping with video_id, title, umls, search_terms,
    and duration_s. Entries missing any required field are excluded with a
    warning. Substring matching is case-insensitive.
    """
    selected = []
    for entry in catalog:
        vid = entry.get("video_id", "<unknown>")
        missing = [k for k in ("umls", "search_terms", "duration_s", "title")
                   if entry.get(k) is None]
        if missing:
            warnings.warn(f"video {vid} missing metadata {missing}; excluded",
                          DataWarning, stacklevel=2)
            continue
        umls = " ".join(entry["umls"]).lower()
        terms = " ".join(entry["search_terms"]).lower()
        title = str(entry["title"]).lower()
        duration = float(entry["duration_s"])
        if rule.umls_substring not in umls:
            continue
        if rule.search_substring not in terms:
            continue
        if not (rule.min_duration_s <= duration <= rule.max_duration_s):
            continue
        if rule.title_predicate is not None and not rule.title_predicate(title):
            continue
        selected.append(vid)
    return selected
