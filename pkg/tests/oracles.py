"""Independent brute-force references used by the tests.

Everything here is re-derived from definitions (enumeration, running
sums, two-point interpolation) and deliberately shares no code with the
library implementations it is used to check.
"""

from __future__ import annotations

import math


def interval_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    if hi <= lo:
        return 0.0
    inter = hi - lo
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def ap_from_flags(flags: list[int], n_gt: int) -> float:
    """All-point interpolated AP from a ranked TP/FP vector.

    Walks recall levels where a TP occurs and takes the best precision at
    or after that rank (the right-side precision envelope), summing
    rectangle areas between consecutive recall levels.
    """
    if n_gt <= 0:
        raise ValueError("need at least one ground-truth item")
    n = len(flags)
    precisions = []
    hits = 0
    for k in range(n):
        hits += flags[k]
        precisions.append(hits / (k + 1))
    area = 0.0
    prev_recall = 0.0
    hits = 0
    for k in range(n):
        if flags[k]:
            hits += 1
            recall = hits / n_gt
            best_later = max(precisions[k:])
            area += (recall - prev_recall) * best_later
            prev_recall = recall
    return area


def best_assignment_ap(
    preds: list[tuple[float, float]],
    gts: list[tuple[float, float]],
    threshold: float,
) -> float:
    """Max AP over every injective pred->gt assignment with IoU >= threshold.

    ``preds`` must already be in rank order (highest confidence first).
    Enumerates assignments recursively; feasible because the instances are
    capped at 8 predictions and 4 ground-truth spans.
    """
    compat = [
        [j for j, g in enumerate(gts) if interval_iou(p, g) >= threshold]
        for p in preds
    ]
    best = 0.0
    flags = [0] * len(preds)
    used = [False] * len(gts)

    def recurse(i: int) -> None:
        nonlocal best
        if i == len(preds):
            best = max(best, ap_from_flags(flags, len(gts)))
            return
        recurse(i + 1)  # pred i unmatched
        for j in compat[i]:
            if not used[j]:
                used[j] = True
                flags[i] = 1
                recurse(i + 1)
                flags[i] = 0
                used[j] = False

    recurse(0)
    return best


def ranked_ap_definition(scores: list[float], positive: list[bool]) -> float:
    """AP of a ranked retrieval list straight from the definition:
    mean over positive items of (positives seen / rank), ranking by score
    descending with ties broken by original index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(positive)
    if n_pos == 0:
        raise ValueError("no positive items")
    total = 0.0
    seen = 0
    for rank, idx in enumerate(order, start=1):
        if positive[idx]:
            seen += 1
            total += seen / rank
    return total / n_pos


def linear_interp_reference(xs: list[float], ys: list[float], q: float) -> float:
    """Two-point linear interpolation with constant extension outside."""
    if q <= xs[0]:
        return ys[0]
    if q >= xs[-1]:
        return ys[-1]
    for k in range(len(xs) - 1):
        if xs[k] <= q <= xs[k + 1]:
            t = (q - xs[k]) / (xs[k + 1] - xs[k])
            return (1 - t) * ys[k] + t * ys[k + 1]
    raise AssertionError("unreachable")


def bce_reference(probs, labels, pos_weight, eps=1e-6) -> float:
    total = 0.0
    n = 0
    for p, y in zip(probs, labels):
        p = min(max(p, eps), 1 - eps)
        total += -(pos_weight * y * math.log(p) + (1 - y) * math.log(1 - p))
        n += 1
    return total / n


def tversky_reference(probs, labels, alpha, beta, eps=1e-6) -> float:
    tp = sum(p * y for p, y in zip(probs, labels))
    fp = sum(p * (1 - y) for p, y in zip(probs, labels))
    fn = sum((1 - p) * y for p, y in zip(probs, labels))
    return 1 - (tp + eps) / (tp + alpha * fp + beta * fn + eps)
