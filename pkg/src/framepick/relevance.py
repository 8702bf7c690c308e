"""Parsing and expansion of generative relevance output.

The scorer emits a single JSON object whose keys are window-local frame
indices ("5") or inclusive spans ("12-18") and whose values are integer
confidence scores 0..5, or the literal token [None] when nothing matches.
Real generations are noisy, so two modes exist: strict rejects any
deviation (test default), lenient salvages every well-formed pair from
whatever arrived and counts its interventions (pipeline default).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .errors import (
    InvertedSpan,
    MalformedOutput,
    ScoreOutOfRange,
    SpanOutOfWindow,
)

NO_MATCH_TOKEN = "[None]"

SCORE_MIN = 0
SCORE_MAX = 5

_KEY_RE = re.compile(r"\d+(\s*-\s*\d+)?")
_PAIR_SALVAGE_RE = re.compile(r'"\s*(\d+(?:\s*-\s*\d+)?)\s*"\s*:\s*(-?\d+(?:\.\d+)?)')


@dataclass(frozen=True)
class RelevanceEntry:
    """One parsed span: local indices start..end (inclusive) at one score."""

    start_local: int
    end_local: int
    score: int

    def __post_init__(self):
        if self.start_local < 1:
            raise MalformedOutput(f"local indices are 1-based, got {self.start_local}")
        if self.end_local < self.start_local:
            raise InvertedSpan(f"span {self.start_local}-{self.end_local} is inverted")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ScoreOutOfRange(f"score {self.score} outside {SCORE_MIN}..{SCORE_MAX}")

    @property
    def width(self) -> int:
        return self.end_local - self.start_local + 1


@dataclass
class ParsedRelevance:
    """Parser result: entries (possibly empty), the raw generation, and how
    many lenient interventions (discards/coercions) it took to get there."""

    entries: list[RelevanceEntry] = field(default_factory=list)
    raw_text: str = ""
    lenient_salvage_count: int = 0


def _parse_key(key: str) -> tuple[int, int] | None:
    """Return (start, end) if the key matches the span grammar, else None."""
    if not isinstance(key, str) or not _KEY_RE.fullmatch(key.strip()):
        return None
    stripped = key.strip()
    if "-" in stripped:
        start_s, end_s = stripped.split("-", 1)
        return int(start_s.strip()), int(end_s.strip())
    return int(stripped), int(stripped)


def _json_object_pairs(text: str) -> list | None:
    """Decode ``text`` as exactly one JSON object, keeping duplicate keys."""
    try:
        decoded = json.loads(text, object_pairs_hook=lambda pairs: ("__obj__", pairs))
    except (json.JSONDecodeError, RecursionError):
        return None
    if isinstance(decoded, tuple) and decoded and decoded[0] == "__obj__":
        return decoded[1]
    return None


def _flatten_pairs(raw):
    """Unnest object_pairs_hook tuples so nested objects surface as values."""
    if isinstance(raw, tuple) and raw and raw[0] == "__obj__":
        return {"__nested__": raw[1]}
    return raw


def parse_relevance_output(text: str, mode: str = "strict") -> ParsedRelevance:
    """Parse a complete generation into relevance entries.

    strict: the text must be the no-match token or a JSON object obeying the
    grammar; any deviation raises (MalformedOutput / ScoreOutOfRange /
    InvertedSpan) with the raw text preserved. lenient: recover whatever is
    recoverable, never raise.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown parse mode {mode!r}")
    if not isinstance(text, str):
        text = str(text)

    if mode == "strict":
        return _parse_strict(text)
    return _parse_lenient(text)


def _parse_strict(text: str) -> ParsedRelevance:
    stripped = text.strip()
    if stripped == NO_MATCH_TOKEN:
        return ParsedRelevance(entries=[], raw_text=text)

    pairs = _json_object_pairs(stripped)
    if pairs is None:
        raise MalformedOutput("output is neither a JSON object nor the no-match token",
                              raw_text=text)

    entries = []
    for key, value in pairs:
        span = _parse_key(key) if isinstance(key, str) and _strict_key_ok(key) else None
        if span is None:
            raise MalformedOutput(f"key {key!r} does not match the span grammar",
                                  raw_text=text)
        score = _strict_score(value, text)
        start, end = span
        if start < 1:
            raise MalformedOutput(f"key {key!r} uses a 0-based index", raw_text=text)
        if end < start:
            raise InvertedSpan(f"span {key!r} has start > end", raw_text=text)
        entries.append(RelevanceEntry(start, end, score))
    return ParsedRelevance(entries=entries, raw_text=text)


def _strict_key_ok(key: str) -> bool:
    return _KEY_RE.fullmatch(key) is not None


def _strict_score(value, raw_text: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedOutput(f"score {value!r} is not a number", raw_text=raw_text)
    if isinstance(value, float):
        raise MalformedOutput(f"score {value!r} is not an integer", raw_text=raw_text)
    if not SCORE_MIN <= value <= SCORE_MAX:
        raise ScoreOutOfRange(f"score {value} outside {SCORE_MIN}..{SCORE_MAX}",
                              raw_text=raw_text)
    return int(value)


def _parse_lenient(text: str) -> ParsedRelevance:
    if NO_MATCH_TOKEN in text:
        return ParsedRelevance(entries=[], raw_text=text)

    pairs, salvage = _recover_pairs(text)
    entries = []
    for key, value in pairs:
        span = _parse_key(key) if isinstance(key, str) else None
        if span is None:
            salvage += 1
            continue
        score, coercions = _lenient_score(value)
        salvage += coercions
        if score is None:
            salvage += 1
            continue
        start, end = span
        if start < 1 or end < start:
            salvage += 1
            continue
        entries.append(RelevanceEntry(start, end, score))
    return ParsedRelevance(entries=entries, raw_text=text, lenient_salvage_count=salvage)


def _lenient_score(value) -> tuple[int | None, int]:
    """Coerce a value to an in-range integer score: (score|None, coercions)."""
    coercions = 0
    if isinstance(value, bool) or value is None:
        return None, 0
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            return None, 0
        coercions += 1
    if isinstance(value, float):
        if not math.isfinite(value):
            return None, coercions
        floored = math.floor(value)
        if floored != value:
            coercions += 1
        if SCORE_MIN <= floored <= SCORE_MAX:
            return floored, coercions
        return None, coercions
    if isinstance(value, int):
        if SCORE_MIN <= value <= SCORE_MAX:
            return value, coercions
        return None, coercions
    return None, coercions


def _recover_pairs(text: str) -> tuple[list, int]:
    """Find the first parseable JSON object in free text; fall back to
    regex pair extraction when no balanced object decodes."""
    for start, end in _balanced_objects(text):
        pairs = _json_object_pairs(text[start:end])
        if pairs is not None:
            return [(k, _flatten_pairs(v)) for k, v in pairs], 0
    matches = _PAIR_SALVAGE_RE.findall(text)
    if not matches:
        return [], 0
    pairs = []
    for key, value in matches:
        pairs.append((key, float(value) if "." in value else int(value)))
    # one intervention for the unparseable wrapper the pairs were dug out of
    return pairs, 1


def _balanced_objects(text: str):
    """Yield (start, end) spans of top-level balanced {...} runs."""
    depth = 0
    start = None
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0 and start is not None:
                    yield start, i + 1
                    start = None


def serialize_entries(entries: list[RelevanceEntry]) -> str:
    """Render entries back to the canonical grammar (inverse of parsing)."""
    if not entries:
        return NO_MATCH_TOKEN
    parts = []
    for e in entries:
        key = str(e.start_local) if e.start_local == e.end_local else f"{e.start_local}-{e.end_local}"
        parts.append(f'"{key}": {e.score}')
    return "{" + ", ".join(parts) + "}"


def expand_entries(
    entries: list[RelevanceEntry],
    window_n: int,
    mode: str = "strict",
) -> dict[int, int]:
    """Expand spans to a per-local-index score map.

    Overlapping spans resolve to the maximum score. Score-0 indices stay in
    the map (they are recorded, just not relevant). strict raises
    SpanOutOfWindow on indices outside 1..window_n; lenient clips.
    """
    if window_n < 1:
        raise SpanOutOfWindow(f"window_n must be >= 1, got {window_n}")
    scores: dict[int, int] = {}
    for e in entries:
        start, end = e.start_local, e.end_local
        if start > window_n or end < 1:
            if mode == "strict":
                raise SpanOutOfWindow(
                    f"span {start}-{end} lies outside window 1..{window_n}"
                )
            continue
        if start < 1 or end > window_n:
            if mode == "strict":
                raise SpanOutOfWindow(
                    f"span {start}-{end} exceeds window 1..{window_n}"
                )
            start, end = max(start, 1), min(end, window_n)
        for local in range(start, end + 1):
            prev = scores.get(local)
            if prev is None or e.score > prev:
                scores[local] = e.score
    return scores
