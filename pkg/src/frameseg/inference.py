"""Prediction pipeline: decode masks, convert to spans and clip scores.

Each sample is decoded with (constrained) beam search, the winning mask
is converted to ranked moment spans via run-length conversion plus
mean-probability confidences, and per-clip saliency scores are read off
the piecewise-linear interpolation of the frame probabilities at the clip
centers.
"""

from __future__ import annotations

import json
import logging
from typing import Sequence

from .data import VideoSample, variation_pick
from .maskcodec import mask_to_moments, parse_mask, score_spans
from .metrics import PredictionRecord
from .model import ToyDecoder, beam_decode_batch, encode_sample
from .timeline import Timeline, clip_query_times, interpolate_scores

logger = logging.getLogger(__name__)

_DECODE_CHUNK = 64


def predict_samples(
    model: ToyDecoder,
    samples: Sequence[VideoSample],
    *,
    n_beams: int = 2,
    constrained: bool = True,
    clip_len: float = 2.0,
    variation: str = "middle",
) -> tuple[list[PredictionRecord], list[list[int]]]:
    """Decode every sample; returns prediction records and the raw bit masks.

    Evaluation always reads the middle feature variant unless told
    otherwise. Unconstrained decoding falls back to lenient mask parsing.
    """
    cfg = model.cfg
    records: list[PredictionRecord] = []
    masks: list[list[int]] = []
    for lo in range(0, len(samples), _DECODE_CHUNK):
        chunk = samples[lo:lo + _DECODE_CHUNK]
        inputs = [
            encode_sample(s, variation_pick(s, variation), cfg, with_answer=False)
            for s in chunk
        ]
        results = beam_decode_batch(model, inputs, n_beams=n_beams,
                                    constrained=constrained)
        for sample, res in zip(chunk, results):
            bits = parse_mask(res.mask_text, cfg.f,
                              "strict" if constrained else "lenient")
            tl = Timeline(duration=sample.duration, fps=30.0, f=cfg.f)
            spans = score_spans(mask_to_moments(bits, tl), res.probs, tl)
            clip_scores = interpolate_scores(
                res.probs, tl, clip_query_times(sample.duration, clip_len))
            records.append(PredictionRecord(
                qid=sample.qid, pred_spans=spans, pred_clip_scores=clip_scores))
            masks.append(bits)
    return records, masks


def frame_accuracy(masks: Sequence[Sequence[int]],
                   samples: Sequence[VideoSample], f: int) -> float:
    """Fraction of frames whose predicted bit matches the label mask."""
    from .maskcodec import moments_to_mask
    correct = total = 0
    for bits, sample in zip(masks, samples):
        tl = Timeline(duration=sample.duration, fps=30.0, f=f)
        gt = moments_to_mask(sample.gt_spans, tl)
        correct += sum(int(a == b) for a, b in zip(bits, gt))
        total += f
    return correct / total if total else float("nan")


def write_predictions(records: Sequence[PredictionRecord], path: str) -> None:
    """One JSON line per query: qid, ranked [start, end, score] windows,
    and per-clip saliency scores."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "qid": rec.qid,
                "pred_relevant_windows": [
                    [s.start, s.end, s.confidence] for s in rec.ranked_spans()
                ],
                "pred_saliency_scores": list(rec.pred_clip_scores),
            }
            fh.write(json.dumps(obj) + "\n")


def load_predictions(path: str) -> list[PredictionRecord]:
    """Read prediction JSONL back into records."""
    from .maskcodec import MomentSpan
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                spans = [MomentSpan(w[0], w[1], confidence=w[2])
                         for w in obj["pred_relevant_windows"]]
                records.append(PredictionRecord(
                    qid=int(obj["qid"]),
                    pred_spans=spans,
                    pred_clip_scores=[float(v) for v in
                                      obj.get("pred_saliency_scores", [])],
                ))
            except (KeyError, IndexError, TypeError, ValueError,
                    json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad prediction record "
                                 f"({exc})") from exc
    return records
