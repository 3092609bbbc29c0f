"""Time <-> frame arithmetic for uniformly sampled videos.

A video of ``duration`` seconds is cut into ``f`` equal windows of
``step = duration / f`` seconds each; frame ``i`` represents window ``i``
and sits at the window midpoint ``(i + 0.5) * step``. The step is kept
real-valued so durations that are not an exact multiple of the sampling
interval are handled without snapping.

Everything here is a pure function over a frozen :class:`Timeline`;
safe to call from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Timeline:
    """Uniform sampling grid over one video.

    duration : video length in seconds (> 0)
    fps      : source frame rate (> 0); only used to map window midpoints
               back to raw-video frame indices
    f        : number of sampled frames (>= 1)
    """

    duration: float
    fps: float
    f: int

    def __post_init__(self) -> None:
        if not (self.duration > 0):
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if not (self.fps > 0):
            raise ValueError(f"fps must be > 0, got {self.fps}")
        if not (isinstance(self.f, int) and self.f >= 1):
            raise ValueError(f"f must be an integer >= 1, got {self.f}")

    @property
    def step(self) -> float:
        """Window length in seconds (duration / f)."""
        return self.duration / self.f

    def center(self, i: int) -> float:
        """Midpoint time of window ``i`` in seconds."""
        return (i + 0.5) * self.step

    def centers(self) -> list[float]:
        """Midpoint times of all ``f`` windows."""
        return [self.center(i) for i in range(self.f)]


def sample_indices(tl: Timeline) -> list[int]:
    """Raw-video frame index for each sampled window midpoint.

    Index i = floor(step * fps * (0.5 + i)), clamped to the valid raw-frame
    range [0, floor(duration * fps) - 1]. Floor keeps indices valid for all
    durations; clamping only matters at the right edge.
    """
    last_valid = max(int(math.floor(tl.duration * tl.fps)) - 1, 0)
    out = []
    for i in range(tl.f):
        idx = int(math.floor(tl.step * tl.fps * (0.5 + i)))
        out.append(min(max(idx, 0), last_valid))
    return out


def frame_windows(tl: Timeline) -> list[tuple[float, float]]:
    """Half-open windows [i*step, (i+1)*step) partitioning [0, duration).

    The last window end is pinned to ``duration`` exactly so the windows
    tile the video with no float drift.
    """
    edges = [i * tl.step for i in range(tl.f)] + [tl.duration]
    return [(edges[i], edges[i + 1]) for i in range(tl.f)]


def neighbor_indices(center_index: int, offset: int, total_frames: int) -> tuple[int, int]:
    """Left/right raw-frame neighbors of a sampled frame, clamped in range.

    Used to pick variation frames a fixed number of raw frames away from
    the window midpoint.
    """
    if not (0 <= center_index < total_frames):
        raise ValueError(
            f"center_index {center_index} out of range [0, {total_frames})")
    if offset < 0:
        raise ValueError(f"offset must be >= 0, got {offset}")
    left = max(center_index - offset, 0)
    right = min(center_index + offset, total_frames - 1)
    return left, right


def interpolate_scores(
    frame_scores: Sequence[float],
    tl: Timeline,
    query_times: Sequence[float],
) -> list[float]:
    """Piecewise-linear interpolation of per-frame scores at arbitrary times.

    Scores live at the frame centers. Between adjacent centers the value is
    linearly interpolated; before the first / after the last center it is
    clamped to the edge frame's score (there is no exterior data to
    extrapolate from).
    """
    if len(frame_scores) == 0:
        raise ValueError("frame_scores must be non-empty")
    if len(frame_scores) != tl.f:
        raise ValueError(
            f"expected {tl.f} frame scores, got {len(frame_scores)}")
    for q in query_times:
        if not (0.0 <= q <= tl.duration):
            raise ValueError(
                f"query time {q} outside [0, {tl.duration}]")

    step = tl.step
    out = []
    for q in query_times:
        # fractional frame position of q relative to the center grid
        pos = q / step - 0.5
        if pos <= 0.0:
            out.append(float(frame_scores[0]))
        elif pos >= tl.f - 1:
            out.append(float(frame_scores[-1]))
        else:
            lo = int(math.floor(pos))
            t = pos - lo
            out.append(float((1.0 - t) * frame_scores[lo] + t * frame_scores[lo + 1]))
    return out


def clip_query_times(duration: float, clip_len: float) -> list[float]:
    """Center times of fixed-length scoring clips covering [0, duration).

    Clip k covers [k*clip_len, (k+1)*clip_len); there are
    ceil(duration / clip_len) clips. For every full clip the query time is
    its midpoint ``k*clip_len + clip_len/2``. The final clip may be cut
    short by the video end, in which case its query time is the midpoint
    of the clipped span ``(k*clip_len + duration) / 2`` (this is the clamp
    rule: the edge clip is shrunk to the video end before taking its
    center).
    """
    if not (clip_len > 0):
        raise ValueError(f"clip_len must be > 0, got {clip_len}")
    if not (duration > 0):
        raise ValueError(f"duration must be > 0, got {duration}")
    n_clips = int(math.ceil(duration / clip_len))
    out = []
    for k in range(n_clips):
        start = k * clip_len
        end = min(start + clip_len, duration)
        out.append((start + end) / 2.0)
    return out
