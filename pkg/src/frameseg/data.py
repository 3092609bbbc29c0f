"""Benchmark ingestion, synthetic corpus generation, prompts and statistics.

The on-disk corpus format is one JSON object per line with fields ``qid``
(int), ``query`` (string), ``duration`` (number), ``relevant_windows``
([[start, end], ...] in seconds), optional ``saliency_scores``
([[a1, a2, a3], ...], integer ratings 0-4) and optional
``relevant_clip_ids`` ([int]). When clip ids are present the saliency
list is sparse (one entry per listed clip) and gets expanded to the full
ceil(duration / clip_len) grid with zero ratings elsewhere; unlabeled
clips count as non-relevant.

Frame features are stored out-of-line as a flat little-endian array file
plus a small JSON sidecar (dtype, shape, qid ordering), so the corpus can
be read without Python-specific containers.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .maskcodec import MomentSpan, moments_to_mask
from .timeline import Timeline, clip_query_times

logger = logging.getLogger(__name__)

VARIANTS = ("left", "middle", "right")
MIDDLE = VARIANTS.index("middle")

# Activity names a synthetic query can refer to; each maps to one feature
# prototype. Single words so they stay single tokens.
ACTIVITY_NAMES = ("juggling", "surfing", "painting", "dancing", "cooking",
                  "skating", "climbing", "fishing")

SYSTEM_PROMPT = (
    "You are a smart video retrieval assistant. \n"
    "You will receive a video and a human activity query given by the user. \n"
    "Return the frames that matches the activity query. \n"
    "Follow the output format given by the user."
)

_PROMPT_TEMPLATE = """You are given {f} frames sampled from a video, ordered and separated by newline characters, indexed from 0 to {last}:
{frame_lines}

**Your task**: given an activity, analyze the video frames to identify which ones contain the specified activity.

**Output format**: provide a {f} character binary segmentation mask, specifically:
- '1' means the frame at that position likely matches to the activity.
- '0' means the frame at that position likely does not match to the activity.
- Your output must be exactly {f} characters long and contain only '1's and '0's, with no spaces or other delimiters and no explanations.

**Activity**: {query}

**Question**: Which frames contains the activity?"""


class DataError(ValueError):
    """Malformed corpus record or file."""


@dataclass
class VideoSample:
    """One query + video instance.

    ``features`` holds the three variation planes (left, middle, right),
    shape (3, f, feature_dim); real benchmark JSONL carries no features,
    so it may be None. ``gt_clip_saliency`` is the dense per-clip grid of
    annotator ratings, (n_clips, n_annotators).
    """

    qid: int
    query: str
    duration: float
    gt_spans: list[MomentSpan] = field(default_factory=list)
    gt_clip_saliency: Optional[list[list[int]]] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not (self.duration > 0):
            raise DataError(f"qid {self.qid}: duration must be > 0")
        for s in self.gt_spans:
            if s.end > self.duration + 1e-9:
                raise DataError(
                    f"qid {self.qid}: span end {s.end} exceeds duration")
        if self.gt_clip_saliency is not None:
            expect = math.ceil(self.duration / 2.0)
            if len(self.gt_clip_saliency) != expect:
                raise DataError(
                    f"qid {self.qid}: saliency grid has "
                    f"{len(self.gt_clip_saliency)} clips, expected {expect}")

    @property
    def frame_features(self) -> Optional[np.ndarray]:
        """Middle-variant features, shape (f, feature_dim)."""
        if self.features is None:
            return None
        return self.features[MIDDLE]


def build_prompt(query: str, f: int) -> str:
    """Instantiate the instruction prompt for ``f`` frames and one query.

    Every frame-count literal in the template is parameterized on f; the
    wording (including number agreement such as "1 characters") is fixed.
    One ``<image>`` placeholder appears per frame.
    """
    if f < 1:
        raise ValueError(f"f must be >= 1, got {f}")
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    frame_lines = "\n".join(f"Frame {i}: <image>" for i in range(f))
    return _PROMPT_TEMPLATE.format(f=f, last=f - 1, frame_lines=frame_lines,
                                   query=query)


# ---------------------------------------------------------------------------
# benchmark JSONL
# ---------------------------------------------------------------------------

def _parse_record(obj: dict, line_no: int, clip_len: float) -> VideoSample:
    for key in ("qid", "query", "duration"):
        if key not in obj:
            raise DataError(f"line {line_no}: missing field {key!r}")
    if "relevant_windows" not in obj:
        raise DataError(f"line {line_no}: missing field 'relevant_windows'")
    qid = int(obj["qid"])
    duration = float(obj["duration"])
    spans = []
    for w in obj["relevant_windows"]:
        s, e = float(w[0]), float(w[1])
        s, e = max(s, 0.0), min(e, duration)
        if e <= s:
            logger.warning("line %d: window %s empty after clamping; dropped",
                           line_no, w)
            continue
        spans.append(MomentSpan(s, e))

    saliency = None
    if "saliency_scores" in obj and obj["saliency_scores"] is not None:
        raw = obj["saliency_scores"]
        n_clips = math.ceil(duration / clip_len)
        if "relevant_clip_ids" in obj and obj["relevant_clip_ids"] is not None:
            ids = obj["relevant_clip_ids"]
            if len(ids) != len(raw):
                raise DataError(
                    f"line {line_no}: {len(ids)} clip ids vs "
                    f"{len(raw)} saliency rows")
            n_annot = len(raw[0]) if raw else 3
            saliency = [[0] * n_annot for _ in range(n_clips)]
            for cid, scores in zip(ids, raw):
                if not (0 <= cid < n_clips):
                    raise DataError(f"line {line_no}: clip id {cid} out of range")
                saliency[cid] = [int(v) for v in scores]
        elif len(raw) == n_clips:
            saliency = [[int(v) for v in row] for row in raw]
        else:
            raise DataError(
                f"line {line_no}: dense saliency has {len(raw)} rows, "
                f"expected {n_clips}")

    return VideoSample(qid=qid, query=str(obj["query"]), duration=duration,
                       gt_spans=spans, gt_clip_saliency=saliency)


def load_qvh_jsonl(path: str, *, clip_len: float = 2.0,
                   strict: bool = False) -> list[VideoSample]:
    """Load a benchmark-format JSONL file.

    Record-level failures are reported with their line number and either
    skipped with a log message (default) or raised (``strict=True``).
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc})") from exc
            try:
                samples.append(_parse_record(obj, line_no, clip_len))
            except DataError:
                if strict:
                    raise
                logger.warning("skipping bad record at line %d in %s",
                               line_no, path)
            except (TypeError, ValueError, IndexError, KeyError) as exc:
                if strict:
                    raise DataError(f"line {line_no}: malformed record "
                                    f"({exc})") from exc
                logger.warning("skipping malformed record at line %d in %s "
                               "(%s)", line_no, path, exc)
    if not samples:
        logger.warning("no samples loaded from %s", path)
    return samples


def save_jsonl(samples: Sequence[VideoSample], path: str) -> None:
    """Serialize samples back to the benchmark JSONL schema (dense saliency)."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            obj = {
                "qid": int(s.qid),
                "query": s.query,
                "duration": float(s.duration),
                "relevant_windows": [[float(sp.start), float(sp.end)]
                                     for sp in s.gt_spans],
            }
            if s.gt_clip_saliency is not None:
                obj["saliency_scores"] = s.gt_clip_saliency
            fh.write(json.dumps(obj) + "\n")


def dataset_stats(samples: Sequence[VideoSample], f: int) -> dict:
    """Aggregate background/foreground frame counts over per-sample masks.

    The mask for each sample comes from its spans via the center-in-span
    rule, so the ratio is exactly what the training labels will contain.
    """
    bg = fg = 0
    hist: dict[int, int] = {}
    for s in samples:
        tl = Timeline(duration=s.duration, fps=30.0, f=f)
        mask = moments_to_mask(s.gt_spans, tl)
        ones = sum(mask)
        fg += ones
        bg += f - ones
        bucket = int(s.duration // 10) * 10
        hist[bucket] = hist.get(bucket, 0) + 1
    if fg == 0:
        logger.warning("no foreground frames in corpus; ratio is infinite")
        ratio = math.inf
    else:
        ratio = bg / fg
    total = bg + fg
    return {
        "n_samples": len(samples),
        "bg_frames": bg,
        "fg_frames": fg,
        "bg_fg_ratio": ratio,
        "bg_fraction": bg / total if total else math.nan,
        "duration_histogram": dict(sorted(hist.items())),
    }


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic desk-scale corpus.

    Each sample plants 1-3 disjoint foreground segments whose frames carry
    features near the prototype vector named by the query; background
    frames sit near distractor prototypes. The corpus is a pure function
    of ``seed``.

    ``proto_seed`` fixes the prototype bank separately from the sample
    seed, so corpora generated with different seeds (train/validation
    splits) share one feature geometry.
    """

    n_samples: int = 100
    f: int = 10
    duration: float = 50.0
    feature_dim: int = 16
    n_fg_segments: tuple[int, int] = (1, 3)
    noise_std: float = 0.05
    seed: int = 0
    proto_seed: int = 77
    n_prototypes: int = 6
    fps: float = 30.0
    clip_len: float = 2.0
    n_annotators: int = 3

    def __post_init__(self) -> None:
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        for name in ("f", "feature_dim", "n_prototypes", "n_annotators"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("duration", "fps", "clip_len"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        lo, hi = self.n_fg_segments
        if not (1 <= lo <= hi):
            raise ValueError(f"bad n_fg_segments range {self.n_fg_segments}")
        if self.n_prototypes > len(ACTIVITY_NAMES):
            raise ValueError(
                f"at most {len(ACTIVITY_NAMES)} prototypes supported")


def _prototypes(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Activity prototypes (query-nameable) and disjoint distractor
    prototypes for background frames.

    Keeping the two banks disjoint makes foreground vs background linearly
    separable in feature space at zero noise, regardless of the query.
    """
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.proto_seed, 7919])))
    protos = rng.normal(size=(2 * cfg.n_prototypes, cfg.feature_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos[:cfg.n_prototypes], protos[cfg.n_prototypes:]


def _place_segments(rng: np.random.Generator, f: int, lo: int, hi: int,
                    retries: int = 100) -> list[tuple[int, int]]:
    """Disjoint, non-adjacent frame runs [start, end). Retries then errors."""
    for _ in range(retries):
        n_seg = int(rng.integers(lo, hi + 1))
        max_len = max(1, f // (2 * n_seg))
        lengths = [int(rng.integers(1, max_len + 1)) for _ in range(n_seg)]
        free = f - sum(lengths) - (n_seg - 1)
        if free < 0:
            continue
        # distribute the leftover frames over the n_seg + 1 gap slots
        cuts = sorted(rng.integers(0, free + 1, size=n_seg))
        segs = []
        pos = 0
        prev_cut = 0
        for k in range(n_seg):
            gap = cuts[k] - prev_cut + (1 if k > 0 else 0)
            prev_cut = cuts[k]
            pos += gap
            segs.append((pos, pos + lengths[k]))
            pos += lengths[k]
        if segs[-1][1] <= f:
            return segs
    raise DataError(
        f"could not place {lo}..{hi} segments in {f} frames after {retries} tries")


def _synth_saliency(cfg: SynthConfig, spans: Sequence[MomentSpan]) -> list[list[int]]:
    """Dense annotator ratings: foreground clips 3-4, background 0-1.

    All foreground clips get a 4 from annotator 0; annotators 1-2 reserve
    4 for clips near the segment middle. Background clips adjacent to a
    segment get a 1 from annotator 0.
    """
    centers = clip_query_times(cfg.duration, cfg.clip_len)
    n_clips = len(centers)
    grid = [[0] * cfg.n_annotators for _ in range(n_clips)]
    any_fg = False
    for c, t in enumerate(centers):
        span = next((s for s in spans if s.start <= t < s.end), None)
        if span is None:
            continue
        any_fg = True
        rel = (t - span.start) / span.length
        central = 0.25 <= rel <= 0.75
        for a in range(cfg.n_annotators):
            if a == 0:
                grid[c][a] = 4
            else:
                grid[c][a] = 4 if central else 3
    if not any_fg and spans:
        # step shorter than clip spacing can leave a span without any clip
        # center; rate the clip containing the first span midpoint so the
        # query stays scoreable
        mid = (spans[0].start + spans[0].end) / 2
        c = min(int(mid // cfg.clip_len), n_clips - 1)
        grid[c][0] = 4
        logger.warning("no clip center inside any span; forced clip %d", c)
    # mark background neighbors of segments as mildly salient
    for c, t in enumerate(centers):
        if grid[c][0] > 0:
            continue
        near = any(abs(t - s.start) <= cfg.clip_len or
                   abs(t - s.end) <= cfg.clip_len for s in spans)
        if near:
            grid[c][0] = 1
    return grid


def synth_generate(cfg: SynthConfig) -> list[VideoSample]:
    """Generate the synthetic corpus; bit-identical for a fixed seed.

    Per-sample randomness derives from (seed, qid), so generation order
    or parallelism cannot change the result. The three feature variants
    share prototypes and labels and differ only in their noise draws.
    """
    activity_protos, distractor_protos = _prototypes(cfg)
    tl = Timeline(duration=cfg.duration, fps=cfg.fps, f=cfg.f)
    samples = []
    for qid in range(cfg.n_samples):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([cfg.seed, 1, qid])))
        proto_id = int(rng.integers(cfg.n_prototypes))
        query = f"the person is {ACTIVITY_NAMES[proto_id]} in this video"
        segs = _place_segments(rng, cfg.f, *cfg.n_fg_segments)
        spans = [MomentSpan(float(s * tl.step),
                            float(cfg.duration if e == cfg.f else e * tl.step))
                 for s, e in segs]
        mask = moments_to_mask(spans, tl)

        frame_protos = np.empty((cfg.f, cfg.feature_dim))
        for i, bit in enumerate(mask):
            if bit:
                frame_protos[i] = activity_protos[proto_id]
            else:
                frame_protos[i] = distractor_protos[
                    int(rng.integers(cfg.n_prototypes))]
        feats = frame_protos[None, :, :] + rng.normal(
            0.0, cfg.noise_std, size=(len(VARIANTS), cfg.f, cfg.feature_dim))

        samples.append(VideoSample(
            qid=qid,
            query=query,
            duration=cfg.duration,
            gt_spans=spans,
            gt_clip_saliency=_synth_saliency(cfg, spans),
            features=feats.astype(np.float32),
        ))
    return samples


def variation_pick(sample: VideoSample, mode: str,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Select one feature variant for this pass.

    Training uses ``mode="random"`` (one variant per epoch per sample);
    evaluation always uses the middle frames. Variation only changes
    features, never labels.
    """
    if sample.features is None:
        raise ValueError(f"qid {sample.qid} carries no features")
    if mode == "random":
        if rng is None:
            raise ValueError("mode='random' needs an rng")
        idx = int(rng.integers(len(VARIANTS)))
    elif mode in VARIANTS:
        idx = VARIANTS.index(mode)
    else:
        raise ValueError(f"unknown variation mode {mode!r}")
    return sample.features[idx]


# ---------------------------------------------------------------------------
# corpus directory (JSONL + feature sidecar)
# ---------------------------------------------------------------------------

def save_corpus(samples: Sequence[VideoSample], out_dir: str,
                meta: Optional[dict] = None) -> None:
    """Write corpus.jsonl plus features.bin/features.json sidecars."""
    os.makedirs(out_dir, exist_ok=True)
    save_jsonl(samples, os.path.join(out_dir, "corpus.jsonl"))
    with_feats = [s for s in samples if s.features is not None]
    sidecar = {"qids": [s.qid for s in with_feats], "variants": list(VARIANTS)}
    if with_feats:
        arr = np.stack([s.features for s in with_feats]).astype("<f4")
        arr.tofile(os.path.join(out_dir, "features.bin"))
        sidecar.update(dtype="<f4", shape=list(arr.shape))
    manifest = {"n_samples": len(samples), "features": sidecar}
    if meta:
        manifest.update(meta)
    with open(os.path.join(out_dir, "features.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_corpus(corpus_dir: str) -> list[VideoSample]:
    """Load a corpus directory written by :func:`save_corpus`."""
    samples = load_qvh_jsonl(os.path.join(corpus_dir, "corpus.jsonl"))
    sidecar_path = os.path.join(corpus_dir, "features.json")
    if os.path.exists(sidecar_path):
        with open(sidecar_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)
        if sidecar.get("shape"):
            arr = np.fromfile(os.path.join(corpus_dir, "features.bin"),
                              dtype=sidecar["dtype"]).reshape(sidecar["shape"])
            by_qid = {qid: arr[i] for i, qid in enumerate(sidecar["qids"])}
            for s in samples:
                if s.qid in by_qid:
                    s.features = by_qid[s.qid].astype(np.float32)
    return samples
