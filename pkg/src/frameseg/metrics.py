"""Evaluation metrics: moment-retrieval recall/mAP and highlight AP/HIT@1.

Moment retrieval uses detection-style average precision: predictions are
walked in descending confidence, each greedily matched to the unmatched
ground-truth span of highest IoU above the threshold, and the resulting
precision/recall staircase is integrated with all-point interpolation.
Highlight detection scores ranked retrieval of per-clip saliency against
each annotator's "very good" (rating 4) clips.

All functions are pure per-query computations aggregated by plain means,
and all confidence handling is rank-based, so any monotone rescaling of
scores leaves every metric unchanged. Ties in confidence break by earlier
span start, then qid; ties in clip score break by clip index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .maskcodec import MomentSpan

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass
class PredictionRecord:
    """Model output for one query: ranked spans plus per-clip scores."""

    qid: int
    pred_spans: list[MomentSpan] = field(default_factory=list)
    pred_clip_scores: list[float] = field(default_factory=list)

    def ranked_spans(self) -> list[MomentSpan]:
        """Spans sorted by confidence descending, start ascending on ties."""
        return sorted(self.pred_spans,
                      key=lambda s: (-(s.confidence or 0.0), s.start))


def iou_1d(a: MomentSpan, b: MomentSpan) -> float:
    """Intersection-over-union of two intervals; 0 when disjoint."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    if inter == 0.0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def _check_alignment(records: Sequence[PredictionRecord],
                     gt: Mapping[int, object]) -> None:
    if len(records) == 0:
        raise ValueError("no queries to evaluate")
    missing = [r.qid for r in records if r.qid not in gt]
    if missing:
        raise ValueError(f"qids missing from ground truth: {missing[:10]}")


def recall_at_1(
    records: Sequence[PredictionRecord],
    gt: Mapping[int, Sequence[MomentSpan]],
    threshold: float,
) -> float:
    """Fraction of queries whose top-confidence span reaches IoU >= threshold
    with at least one ground-truth span. Queries without predictions miss."""
    _check_alignment(records, gt)
    hits = 0
    for rec in records:
        ranked = rec.ranked_spans()
        if not ranked:
            continue
        top = ranked[0]
        if any(iou_1d(top, g) >= threshold for g in gt[rec.qid]):
            hits += 1
    return hits / len(records)


def _average_precision(tp_flags: Sequence[int], n_gt: int) -> float:
    """Area under the precision/recall staircase, all-point interpolation."""
    if n_gt <= 0:
        raise ValueError("n_gt must be positive")
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    n = len(tp_flags)
    rec = tp / n_gt
    prec = tp / np.arange(1, n + 1) if n else np.zeros(0)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _query_ap(preds: Sequence[MomentSpan], gts: Sequence[MomentSpan],
              threshold: float) -> float:
    """Greedy best-IoU matching in confidence order, then AP."""
    gts = sorted(gts, key=lambda s: s.start)
    matched = [False] * len(gts)
    flags = []
    for p in preds:
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gts):
            if matched[j]:
                continue
            v = iou_1d(p, g)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= threshold:
            matched[best_j] = True
            flags.append(1)
        else:
            flags.append(0)
    return _average_precision(flags, len(gts))


def map_at_iou(
    records: Sequence[PredictionRecord],
    gt: Mapping[int, Sequence[MomentSpan]],
    threshold: float,
) -> float:
    """Mean over queries of detection AP at one IoU threshold."""
    _check_alignment(records, gt)
    aps = []
    for rec in records:
        gts = list(gt[rec.qid])
        if not gts:
            logger.warning("qid %s has no ground-truth spans; excluded from mAP",
                           rec.qid)
            continue
        aps.append(_query_ap(rec.ranked_spans(), gts, threshold))
    if not aps:
        raise ValueError("no queries with ground-truth spans")
    return float(np.mean(aps))


def avg_map(
    records: Sequence[PredictionRecord],
    gt: Mapping[int, Sequence[MomentSpan]],
    thresholds: Iterable[float] = IOU_THRESHOLDS,
) -> float:
    """Mean of map_at_iou over the threshold grid (0.5 to 0.95 by default)."""
    return float(np.mean([map_at_iou(records, gt, t) for t in thresholds]))


def _ranked_retrieval_ap(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """Classic ranked-retrieval AP with stable tie-break by clip index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(positive)
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if positive[i]:
            hits += 1
            total += hits / rank
    return total / n_pos


def hl_metrics(
    records: Sequence[PredictionRecord],
    gt_saliency: Mapping[int, Sequence[Sequence[int]]],
) -> dict[str, float]:
    """Highlight mAP and HIT@1 against per-annotator clip ratings.

    For each annotator the positive clips are those rated 4 on the 0-4
    scale; hl_map averages the per-annotator ranked AP over annotators
    (skipping annotators with no positives), then over queries. hit_at_1
    asks whether the top-scored clip is positive for at least one
    annotator. Queries where no annotator rated any clip 4 are excluded
    from both aggregates with a warning.
    """
    _check_alignment(records, gt_saliency)
    query_aps = []
    hits = []
    for rec in records:
        ratings = gt_saliency[rec.qid]
        scores = rec.pred_clip_scores
        if len(scores) != len(ratings):
            raise ValueError(
                f"qid {rec.qid}: {len(scores)} clip scores vs "
                f"{len(ratings)} ground-truth clips")
        n_annot = len(ratings[0]) if ratings else 0
        annot_aps = []
        any_positive = [False] * len(ratings)
        for a in range(n_annot):
            positive = [ratings[c][a] == 4 for c in range(len(ratings))]
            for c, p in enumerate(positive):
                any_positive[c] = any_positive[c] or p
            if not any(positive):
                continue
            annot_aps.append(_ranked_retrieval_ap(scores, positive))
        if not annot_aps:
            logger.warning("qid %s has no positively rated clip; excluded "
                           "from HL metrics", rec.qid)
            continue
        query_aps.append(float(np.mean(annot_aps)))
        top = min(range(len(scores)), key=lambda i: (-scores[i], i))
        hits.append(1.0 if any_positive[top] else 0.0)
    if not query_aps:
        raise ValueError("no queries with positive highlight clips")
    return {
        "hl_map": float(np.mean(query_aps)),
        "hit_at_1": float(np.mean(hits)),
    }


def full_report(
    records: Sequence[PredictionRecord],
    gt_spans: Mapping[int, Sequence[MomentSpan]],
    gt_saliency: Mapping[int, Sequence[Sequence[int]]] | None = None,
) -> dict[str, float]:
    """All benchmark metrics on the percent scale used in reports."""
    report = {
        "R1@0.5": 100.0 * recall_at_1(records, gt_spans, 0.5),
        "R1@0.7": 100.0 * recall_at_1(records, gt_spans, 0.7),
        "mAP@0.5": 100.0 * map_at_iou(records, gt_spans, 0.5),
        "mAP@0.75": 100.0 * map_at_iou(records, gt_spans, 0.75),
        "mAP_avg": 100.0 * avg_map(records, gt_spans),
    }
    if gt_saliency is not None:
        hl = hl_metrics(records, gt_saliency)
        report["HL_mAP"] = 100.0 * hl["hl_map"]
        report["HL_HIT@1"] = 100.0 * hl["hit_at_1"]
    return report


def per_query_report(
    records: Sequence[PredictionRecord],
    gt_spans: Mapping[int, Sequence[MomentSpan]],
) -> list[dict[str, float]]:
    """Per-query AP breakdown at 0.5/0.75 plus top-1 IoU, for diagnostics."""
    rows = []
    for rec in records:
        gts = list(gt_spans[rec.qid])
        ranked = rec.ranked_spans()
        top_iou = max((iou_1d(ranked[0], g) for g in gts), default=0.0) \
            if ranked and gts else 0.0
        row = {"qid": rec.qid, "top_iou": top_iou}
        if gts:
            row["AP@0.5"] = _query_ap(ranked, gts, 0.5)
            row["AP@0.75"] = _query_ap(ranked, gts, 0.75)
        rows.append(row)
    return rows
