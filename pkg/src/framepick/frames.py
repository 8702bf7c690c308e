"""Candidate frame pools and retrieval windows.

A frame manifest (newline-delimited JSON, one record per extracted frame)
is subsampled into a :class:`CandidatePool` at a requested rate, then
partitioned into :class:`RetrievalWindow` chunks of at most 256 frames.
Window members are relabeled with local indices 1..n so a scorer sees a
unified index range regardless of the original sampling rate; the bijection
back to global frame ids is kept on the window.
"""

from __future__ import annotations

import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .errors import (
    DataError,
    DuplicateGlobalIndex,
    EmptyManifest,
    EmptyPool,
    LocalIndexOutOfRange,
    NonMonotonicTimestamps,
    RateExceedsSource,
    WindowOverflow,
)

DEFAULT_WINDOW_CAPACITY = 256


@dataclass(frozen=True)
class FrameRef:
    """One candidate frame: dense global index, timestamp, and locator.

    ``source_index`` preserves the original manifest row number after
    subsampling reassigns ``global_index`` densely.
    """

    global_index: int
    timestamp_s: float
    uri: str
    source_index: int | None = None

    def __post_init__(self):
        if self.global_index < 0:
            raise DataError(f"global_index must be >= 0, got {self.global_index}")
        if not math.isfinite(self.timestamp_s) or self.timestamp_s < 0:
            raise DataError(f"timestamp_s must be finite and >= 0, got {self.timestamp_s}")


@dataclass(frozen=True)
class CandidatePool:
    """All frames sampled from one video at ``sample_ratio`` frames/second."""

    video_id: str
    frames: tuple[FrameRef, ...]
    sample_ratio: float
    source_duration_s: float

    def __post_init__(self):
        if self.sample_ratio <= 0:
            raise DataError(f"sample_ratio must be > 0, got {self.sample_ratio}")
        if self.source_duration_s <= 0:
            raise DataError(f"source_duration_s must be > 0, got {self.source_duration_s}")
        last = None
        seen = set()
        for f in self.frames:
            if f.global_index in seen:
                raise DuplicateGlobalIndex(f"global_index {f.global_index} repeats in pool")
            seen.add(f.global_index)
            if last is not None and f.timestamp_s < last.timestamp_s:
                raise NonMonotonicTimestamps(
                    f"frame {f.global_index} at {f.timestamp_s}s precedes {last.timestamp_s}s"
                )
            last = f
        cap = math.ceil(self.source_duration_s * self.sample_ratio)
        if len(self.frames) > cap:
            raise DataError(
                f"pool holds {len(self.frames)} frames but duration x ratio caps it at {cap}"
            )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def sample_period_s(self) -> float:
        return 1.0 / self.sample_ratio


@dataclass(frozen=True)
class RetrievalWindow:
    """Up to ``capacity`` consecutive frames with local indices 1..n."""

    window_id: int
    members: tuple[FrameRef, ...]
    capacity: int = DEFAULT_WINDOW_CAPACITY
    local_map: dict[int, FrameRef] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= len(self.members) <= self.capacity:
            raise WindowOverflow(
                f"window {self.window_id} holds {len(self.members)} members, "
                f"capacity is {self.capacity}"
            )
        seen = set()
        prev = None
        for m in self.members:
            if m.global_index in seen:
                raise DuplicateGlobalIndex(
                    f"global_index {m.global_index} repeats in window {self.window_id}"
                )
            seen.add(m.global_index)
            if prev is not None and m.timestamp_s < prev.timestamp_s:
                raise NonMonotonicTimestamps(
                    f"window {self.window_id} members are not time-sorted"
                )
            prev = m
        object.__setattr__(
            self, "local_map", {i + 1: m for i, m in enumerate(self.members)}
        )

    @property
    def n(self) -> int:
        return len(self.members)

    def local_index_of(self, frame: FrameRef) -> int:
        for local, m in self.local_map.items():
            if m.global_index == frame.global_index:
                return local
        raise LocalIndexOutOfRange(
            f"frame {frame.global_index} is not a member of window {self.window_id}"
        )


def load_manifest(source: str | IO[str]) -> list[dict]:
    """Read a frame manifest (JSONL) from a path, ``-`` for stdin, or a stream.

    Each record needs video_id, global_index, timestamp_s, and uri.
    """
    if isinstance(source, str):
        if source == "-":
            return _parse_manifest_lines(sys.stdin)
        with io.open(source, "r", encoding="utf-8") as fh:
            return _parse_manifest_lines(fh)
    return _parse_manifest_lines(source)


def _parse_manifest_lines(fh: Iterable[str]) -> list[dict]:
    rows = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest line {lineno} is not valid JSON: {exc}") from exc
        missing = {"video_id", "global_index", "timestamp_s", "uri"} - set(rec)
        if missing:
            raise DataError(f"manifest line {lineno} missing fields: {sorted(missing)}")
        rows.append(rec)
    return rows


def write_manifest(rows: Sequence[dict], path: str) -> None:
    with io.open(path, "w", encoding="utf-8") as fh:
        for rec in rows:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _native_rate(timestamps: Sequence[float]) -> float:
    if len(timestamps) < 2:
        return math.inf
    span = timestamps[-1] - timestamps[0]
    if span <= 0:
        return math.inf
    return (len(timestamps) - 1) / span


def build_candidate_pool(manifest: Sequence[dict], sample_ratio: float) -> CandidatePool:
    """Subsample manifest rows to ``sample_ratio`` frames per second.

    Row i is kept iff its timestamp bucket floor(t_i * ratio) advances past
    the last kept bucket, so irregular manifests degrade gracefully. Kept
    frames get dense global indices 0..m-1; the original row index is
    retained as provenance.
    """
    if sample_ratio <= 0:
        raise DataError(f"sample_ratio must be > 0, got {sample_ratio}")
    if not manifest:
        raise EmptyManifest("manifest holds no rows")

    timestamps = []
    for i, rec in enumerate(manifest):
        t = float(rec["timestamp_s"])
        if timestamps and t < timestamps[-1]:
            raise NonMonotonicTimestamps(
                f"manifest row {i} at {t}s precedes {timestamps[-1]}s"
            )
        timestamps.append(t)

    native = _native_rate(timestamps)
    if sample_ratio > native * (1 + 1e-9):
        raise RateExceedsSource(
            f"requested {sample_ratio} fps exceeds the manifest's ~{native:.4f} fps"
        )

    video_id = str(manifest[0]["video_id"])
    frames = []
    last_bucket = None
    for i, rec in enumerate(manifest):
        bucket = math.floor(timestamps[i] * sample_ratio)
        if last_bucket is not None and bucket <= last_bucket:
            continue
        last_bucket = bucket
        frames.append(
            FrameRef(
                global_index=len(frames),
                timestamp_s=timestamps[i],
                uri=str(rec["uri"]),
                source_index=int(rec["global_index"]),
            )
        )

    period = 1.0 / native if math.isfinite(native) else 1.0
    duration = timestamps[-1] - timestamps[0] + period
    return CandidatePool(
        video_id=video_id,
        frames=tuple(frames),
        sample_ratio=sample_ratio,
        source_duration_s=duration,
    )


def pool_from_frames(
    video_id: str,
    frames: Sequence[FrameRef],
    sample_ratio: float,
    source_duration_s: float | None = None,
) -> CandidatePool:
    """Build a pool directly from frames, reindexing them densely."""
    reindexed = tuple(
        FrameRef(i, f.timestamp_s, f.uri, f.source_index) for i, f in enumerate(frames)
    )
    if source_duration_s is None:
        last_t = reindexed[-1].timestamp_s if reindexed else 0.0
        source_duration_s = last_t + 1.0 / sample_ratio
    return CandidatePool(video_id, reindexed, sample_ratio, source_duration_s)


def partition_windows(
    pool: CandidatePool,
    window_capacity: int = DEFAULT_WINDOW_CAPACITY,
    stride: int | None = None,
) -> list[RetrievalWindow]:
    """Slice the pool into time-ordered windows covering every frame.

    Default stride equals the capacity: disjoint consecutive intervals with
    the remainder in the last window. Smaller strides produce overlapping
    windows; emission stops once a window reaches the pool end.
    """
    if not 1 <= window_capacity <= DEFAULT_WINDOW_CAPACITY:
        raise DataError(
            f"window_capacity must be in 1..{DEFAULT_WINDOW_CAPACITY}, got {window_capacity}"
        )
    if stride is None:
        stride = window_capacity
    if not 1 <= stride <= window_capacity:
        raise DataError(f"stride must be in 1..window_capacity, got {stride}")
    if len(pool) == 0:
        raise EmptyPool(f"pool for video {pool.video_id!r} holds no frames")

    windows = []
    start = 0
    n = len(pool)
    while True:
        members = pool.frames[start : start + window_capacity]
        windows.append(normalize_window(members, window_id=len(windows), capacity=window_capacity))
        if start + window_capacity >= n:
            break
        start += stride
    return windows


def normalize_window(
    members: Sequence[FrameRef],
    window_id: int = 0,
    capacity: int = DEFAULT_WINDOW_CAPACITY,
) -> RetrievalWindow:
    """Relabel time-sorted frames with local indices 1..n (n <= capacity)."""
    if not members:
        raise EmptyPool("cannot normalize an empty member list")
    if len(members) > capacity:
        raise WindowOverflow(f"{len(members)} members exceed capacity {capacity}")
    return RetrievalWindow(window_id=window_id, members=tuple(members), capacity=capacity)


def denormalize(window: RetrievalWindow, local_index: int) -> FrameRef:
    """Map a window-local index (1-based) back to its FrameRef."""
    frame = window.local_map.get(local_index)
    if frame is None:
        raise LocalIndexOutOfRange(
            f"local index {local_index} outside 1..{window.n} of window {window.window_id}"
        )
    return frame
