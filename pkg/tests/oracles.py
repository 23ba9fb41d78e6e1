"""Independent brute-force oracles used by the test suite.

Everything here is deliberately naive (loops, enumeration, rasterization) and
shares no code with the library paths it checks.
"""

import itertools

import numpy as np


def grid_iou(a, b, scale=4):
    """IoU by counting lattice cells; exact for boxes with coords on a 1/scale grid."""
    hi_x = int(round(max(a.x_max, b.x_max) * scale)) + 1
    hi_y = int(round(max(a.y_max, b.y_max) * scale)) + 1

    def mask(box):
        x0, y0, x1, y1 = (int(round(v * scale)) for v in box.as_list())
        m = np.zeros((hi_y, hi_x), dtype=bool)
        m[y0:y1, x0:x1] = True
        return m

    ma, mb = mask(a), mask(b)
    union = int(np.logical_or(ma, mb).sum())
    if union == 0:
        return 0.0
    return int(np.logical_and(ma, mb).sum()) / union


def brute_force_assignment(score, threshold):
    """Optimal one-to-one assignment by permutation search, maximizing total score.

    Returns (matches, unmatched_rows, unmatched_cols) with matches sorted by
    row index; pairs below threshold dissolved. Ties between equally scoring
    assignments break toward the lexicographically smallest sorted pair list.
    """
    score = np.asarray(score, dtype=float)
    n, m = score.shape
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    best_total, best_pairs = -np.inf, None
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            pairs = sorted(zip(range(n), perm))
            total = sum(score[i, j] for i, j in pairs)
            if total > best_total or (total == best_total and pairs < best_pairs):
                best_total, best_pairs = total, pairs
    else:
        for perm in itertools.permutations(range(n), m):
            pairs = sorted(zip(perm, range(m)))
            total = sum(score[i, j] for i, j in pairs)
            if total > best_total or (total == best_total and pairs < best_pairs):
                best_total, best_pairs = total, pairs
    matches = [(i, j) for i, j in best_pairs if score[i, j] >= threshold]
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    return (matches,
            [i for i in range(n) if i not in matched_rows],
            [j for j in range(m) if j not in matched_cols])


def naive_path_distance(points, mean_size):
    total = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        total += ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5
    return total / mean_size


def naive_velocity_series(points, mean_size, fps):
    out = []
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        d = ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5
        out.append(d / mean_size * fps)
    return out


def naive_diff_series(series, fps):
    return [(b - a) * fps for a, b in zip(series, series[1:])]


def naive_pose_vectors(nine_points):
    """Eight chain vectors: palm->thumb1..4 then palm->index1..4, by hand."""
    p = [tuple(pt) for pt in nine_points]
    chain = []
    prev = p[0]
    for k in range(1, 5):
        chain.append((p[k][0] - prev[0], p[k][1] - prev[1]))
        prev = p[k]
    prev = p[0]
    for k in range(5, 9):
        chain.append((p[k][0] - prev[0], p[k][1] - prev[1]))
        prev = p[k]
    return chain


def naive_pose_change(nine_t, nine_t1, size_t):
    va = naive_pose_vectors(nine_t)
    vb = naive_pose_vectors(nine_t1)
    total = 0.0
    for (ax, ay), (bx, by) in zip(va, vb):
        total += abs(bx - ax) + abs(by - ay)
    return total / size_t


def naive_integrated_pose_distance(nine_seq, sizes):
    total = 0.0
    for k in range(len(nine_seq) - 1):
        total += naive_pose_change(nine_seq[k], nine_seq[k + 1], sizes[k])
    return total


def lda_projection_oracle(x, labels, gamma_factor=1e-3):
    """Top-2 generalized eigenvectors via the non-symmetric solver, with
    scatter matrices accumulated sample by sample."""
    import scipy.linalg

    x = np.asarray(x, dtype=float)
    labels = list(labels)
    classes = sorted(set(labels))
    d = x.shape[1]
    mean = x.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for c in classes:
        rows = [x[i] for i in range(len(x)) if labels[i] == c]
        mu = np.mean(rows, axis=0)
        for row in rows:
            diff = (row - mu)[:, None]
            s_w += diff @ diff.T
        gap = (mu - mean)[:, None]
        s_b += len(rows) * (gap @ gap.T)
    gamma = gamma_factor * np.trace(s_w) / d
    vals, vecs = scipy.linalg.eig(s_b, s_w + gamma * np.eye(d))
    order = np.argsort(-vals.real)
    top = vecs[:, order[:2]].real
    return top / np.linalg.norm(top, axis=0)


def naive_confusion_counts(pred, truth, labels):
    """Per-class TP/FP/FN from a step-by-step confusion count."""
    counts = {c: {"tp": 0, "fp": 0, "fn": 0} for c in labels}
    for p, t in zip(pred, truth):
        if p == t:
            counts[p]["tp"] += 1
        else:
            counts[p]["fp"] += 1
            counts[t]["fn"] += 1
    return counts


def naive_average_precision(dets, gts, iou_fn, iou_thresh=0.5):
    """AP by enumerating every prefix of the ranked detection list.

    dets: list of (confidence, box); gts: list of boxes. Re-matches from
    scratch for every prefix, then integrates the precision envelope by hand.
    """
    if not gts:
        return None
    if not dets:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][0], i))
    points = []
    for k in range(1, len(order) + 1):
        taken = [False] * len(gts)
        tp = 0
        for i in order[:k]:
            best_v, best_j = -1.0, None
            for j, g in enumerate(gts):
                if taken[j]:
                    continue
                v = iou_fn(dets[i][1], g)
                if v > best_v:
                    best_v, best_j = v, j
            if best_j is not None and best_v >= iou_thresh:
                taken[best_j] = True
                tp += 1
        points.append((tp / len(gts), tp / k))
    ap = 0.0
    prev_recall = 0.0
    for idx, (recall, _) in enumerate(points):
        if recall > prev_recall:
            peak = max(p for r, p in points[idx:] if r >= recall)
            ap += (recall - prev_recall) * peak
            prev_recall = recall
    return ap
