"""Conversions between binary mask text, frame probabilities and moment spans.

The model emits one '0'/'1' character per sampled frame. A maximal run of
1s maps to the union of the corresponding frame windows; conversely a set
of spans labels frame ``i`` foreground iff the frame center falls inside
some span. The center-in-span rule makes the two directions exact inverses
on window-aligned spans.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

from .timeline import Timeline

logger = logging.getLogger(__name__)


class MaskParseError(ValueError):
    """Raised by strict mask parsing; ``position`` is the offending index
    (None when the failure is a length mismatch)."""

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message)
        self.position = position


@dataclass
class FrameMask:
    """Per-frame binary foreground mask, optionally with probabilities.

    When both are produced by decoding, ``bits[i] == 1`` iff
    ``probs[i] >= 0.5``.
    """

    bits: list[int]
    probs: Optional[list[float]] = None

    def __post_init__(self) -> None:
        for i, b in enumerate(self.bits):
            if b not in (0, 1):
                raise ValueError(f"bits[{i}] = {b!r} is not binary")
        if self.probs is not None:
            if len(self.probs) != len(self.bits):
                raise ValueError(
                    f"probs length {len(self.probs)} != bits length {len(self.bits)}")
            for i, p in enumerate(self.probs):
                if not (0.0 <= p <= 1.0):
                    raise ValueError(f"probs[{i}] = {p} outside [0, 1]")

    def consistent(self) -> bool:
        """True when bits agree with thresholding probs at 0.5."""
        if self.probs is None:
            return True
        return all(b == (1 if p >= 0.5 else 0)
                   for b, p in zip(self.bits, self.probs))


@dataclass
class MomentSpan:
    """Half-open [start, end) interval in seconds."""

    start: float
    end: float
    confidence: Optional[float] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.start < self.end):
            raise ValueError(
                f"invalid span [{self.start}, {self.end}): need 0 <= start < end")

    @property
    def length(self) -> float:
        return self.end - self.start


def parse_mask(text: str, f: int, mode: Literal["strict", "lenient"] = "strict") -> list[int]:
    """Parse a binary mask string to a list of f bits.

    strict  : accept only exactly f characters from {0,1}; anything else
              raises :class:`MaskParseError` naming the offending position.
    lenient : drop every character outside {0,1}, truncate to f, right-pad
              with 0 when short (the padding count is logged). Meant for
              free-running generation that may misbehave.
    """
    if f < 1:
        raise ValueError(f"f must be >= 1, got {f}")
    if mode == "strict":
        for pos, ch in enumerate(text):
            if ch not in "01":
                raise MaskParseError(
                    f"invalid character {ch!r} at position {pos}", position=pos)
        if len(text) != f:
            raise MaskParseError(
                f"expected exactly {f} characters, got {len(text)}")
        return [int(ch) for ch in text]
    elif mode == "lenient":
        bits = [int(ch) for ch in text if ch in "01"]
        if len(bits) > f:
            bits = bits[:f]
        elif len(bits) < f:
            pad = f - len(bits)
            logger.warning("lenient mask parse padded %d/%d frames with 0", pad, f)
            bits = bits + [0] * pad
        return bits
    raise ValueError(f"unknown parse mode {mode!r}")


def render_mask(bits: Sequence[int]) -> str:
    """Inverse of strict parsing: bits -> '0'/'1' string."""
    return "".join("1" if b else "0" for b in bits)


def mask_to_moments(bits: Sequence[int], tl: Timeline) -> list[MomentSpan]:
    """Maximal runs of 1s -> spans [run_start*step, (run_end+1)*step).

    Output is sorted by start and pairwise disjoint; adjacent runs are
    separated by at least one 0 frame by construction.
    """
    if len(bits) != tl.f:
        raise ValueError(f"expected {tl.f} bits, got {len(bits)}")
    spans: list[MomentSpan] = []
    run_start = None
    for i, b in enumerate(bits):
        if b and run_start is None:
            run_start = i
        elif not b and run_start is not None:
            spans.append(MomentSpan(run_start * tl.step, i * tl.step))
            run_start = None
    if run_start is not None:
        # pin the last span end to the exact duration, matching frame_windows
        spans.append(MomentSpan(run_start * tl.step, tl.duration))
    return spans


def moments_to_mask(spans: Sequence[MomentSpan], tl: Timeline) -> list[int]:
    """Frame i is foreground iff its center lies inside some span.

    The half-open check ``start <= center < end`` mirrors the span
    convention; it makes this the exact inverse of :func:`mask_to_moments`
    on window-aligned spans.
    """
    bits = [0] * tl.f
    for i in range(tl.f):
        c = tl.center(i)
        for s in spans:
            if s.start <= c < s.end:
                bits[i] = 1
                break
    return bits


def score_spans(
    spans: Sequence[MomentSpan],
    probs: Sequence[float],
    tl: Timeline,
) -> list[MomentSpan]:
    """Attach a confidence to each span and rank spans by it.

    Confidence is the mean foreground probability over frames whose centers
    lie inside the span; it is monotone in the underlying logits and cheap
    to reproduce. A degenerate span that contains no frame center falls
    back to the probability of the frame center nearest to the span
    midpoint (logged, since it means the span is narrower than one step).
    """
    if len(probs) != tl.f:
        raise ValueError(f"expected {tl.f} probabilities, got {len(probs)}")
    scored = []
    centers = tl.centers()
    for s in spans:
        inside = [probs[i] for i, c in enumerate(centers) if s.start <= c < s.end]
        if inside:
            conf = sum(inside) / len(inside)
        else:
            mid = (s.start + s.end) / 2.0
            nearest = min(range(tl.f), key=lambda i: abs(centers[i] - mid))
            conf = float(probs[nearest])
            logger.warning(
                "span [%g, %g) contains no frame center; using nearest frame %d",
                s.start, s.end, nearest)
        scored.append(MomentSpan(s.start, s.end, confidence=conf))
    scored.sort(key=lambda s: (-s.confidence, s.start))
    return scored
