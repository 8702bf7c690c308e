"""Four-stage dataset construction pipeline and timestamp-label aggregation.

Stage 1 captions a densely sampled frame pool (0.2 fps), stage 2 turns
caption chunks into QA samples with grounded frames, stage 3 extends the
relevant set by similarity until the retrieval ratio reaches its target,
and stage 4 assigns fine-grained 0..5 confidence scores. All model calls go
through annotator clients; deterministic stubs make the whole pipeline
runnable offline. Stage artifacts are newline-delimited JSON per video
under a run directory, so stages are resumable and idempotent per
(video_id, stage, seed).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import requests

from .backends import SimilarityBackend
from .errors import (
    AnnotatorUnavailable,
    DataError,
    EmptyPool,
    SchemaViolation,
)
from .frames import CandidatePool, FrameRef, pool_from_frames
from .prompts import TemplateStore, format_mmss

logger = logging.getLogger(__name__)

LOW_QUALITY_SIGNAL = "the question has low quality"

DEFAULT_TASK_TYPES = (
    "object_reasoning",
    "action_reasoning",
    "spatial_reasoning",
    "temporal_reasoning",
    "object_perception",
    "action_perception",
    "attribute_perception",
    "spatial_perception",
    "video_detail_referring",
    "counting",
    "ocr",
    "temporal_perception",
)

MC_LETTERS = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class FrameCaption:
    frame: FrameRef
    text: str
    flagged: bool = False


@dataclass(frozen=True)
class QASample:
    """One dataset row: question, answer, and its scored relevant frames."""

    video_id: str
    question: str
    options: tuple[str, ...] | None
    answer: str
    task_type: str
    grounded_frames: frozenset[int]
    candidate_relevant: frozenset[int]
    scored_relevant: dict[int, int] = field(default_factory=dict)
    is_negative: bool = False
    sample_id: str = ""

    def __post_init__(self):
        if self.options is not None:
            if len(self.options) != len(MC_LETTERS):
                raise SchemaViolation(
                    f"multiple-choice samples need exactly {len(MC_LETTERS)} options"
                )
            if self.answer not in MC_LETTERS:
                raise SchemaViolation(f"answer {self.answer!r} is not a letter A-E")
        if not self.grounded_frames <= self.candidate_relevant:
            raise DataError("grounded frames must stay inside the candidate set")
        if self.is_negative and any(s > 0 for s in self.scored_relevant.values()):
            raise DataError("negative samples cannot carry positive scores")


@dataclass(frozen=True)
class RetrievalRatio:
    n_grd: int
    n_total: int

    def __post_init__(self):
        if self.n_total < 1:
            raise DataError(f"n_total must be >= 1, got {self.n_total}")
        if not 0 <= self.n_grd <= self.n_total:
            raise DataError(f"n_grd {self.n_grd} outside 0..{self.n_total}")

    @property
    def r_f(self) -> float:
        return self.n_grd / self.n_total


@dataclass
class ForgeConfig:
    caption_fps: float = 0.2
    chunk_size: int = 50
    task_types: tuple[str, ...] = DEFAULT_TASK_TYPES
    mc_fraction: float = 0.5
    negative_rate: float = 0.01
    target_ratio: float = 0.30
    score_min: int = 0
    score_max: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.target_ratio <= 1:
            raise DataError(f"target_ratio must be in (0, 1], got {self.target_ratio}")
        if not 0 <= self.negative_rate < 1:
            raise DataError(f"negative_rate must be in [0, 1), got {self.negative_rate}")
        if not 0 <= self.mc_fraction <= 1:
            raise DataError(f"mc_fraction must be in [0, 1], got {self.mc_fraction}")
        if self.chunk_size < 1:
            raise DataError(f"chunk_size must be >= 1, got {self.chunk_size}")

    def to_dict(self) -> dict:
        return {
            "caption_fps": self.caption_fps,
            "chunk_size": self.chunk_size,
            "task_types": list(self.task_types),
            "mc_fraction": self.mc_fraction,
            "negative_rate": self.negative_rate,
            "target_ratio": self.target_ratio,
            "score_min": self.score_min,
            "score_max": self.score_max,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EtRecord:
    """One timestamp-supervised training row (or an aggregate of several)."""

    video_id: str
    query: str
    timestamp_labels: tuple
    task_tag: str = ""
    per_query: tuple | None = None


class AnnotatorClient(ABC):
    """Model endpoint used by the forge stages.

    The wire shape mirrors the generative scorer contract plus a
    template_id; stubs compute deterministic answers from the payload.
    """

    @abstractmethod
    def complete(self, template_id: str, payload: dict) -> str:
        raise NotImplementedError


class RemoteAnnotatorClient(AnnotatorClient):
    def __init__(
        self,
        endpoint: str,
        model_id: str = "default",
        timeout_s: float = 120.0,
        token_env: str = "ANNOTATOR_TOKEN",
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.timeout_s = timeout_s
        self.token_env = token_env
        self._session = session or requests.Session()

    def complete(self, template_id: str, payload: dict) -> str:
        body = {"model_id": self.model_id, "template_id": template_id,
                "decode": {"temperature": 0.0, "max_tokens": 1024}}
        body.update(payload)
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self._session.post(self.endpoint, json=body, headers=headers,
                                      timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise AnnotatorUnavailable(f"annotator endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise AnnotatorUnavailable(f"annotator returned HTTP {resp.status_code}")
        try:
            return str(resp.json()["text"])
        except (ValueError, KeyError) as exc:
            raise AnnotatorUnavailable(f"annotator sent an unusable body: {exc}") from exc


def _digest(*parts) -> int:
    joined = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.md5(joined.encode("utf-8")).digest()[:8], "big")


class StubCaptioner(AnnotatorClient):
    """Echoes frame identity: caption 'frame-<global_index>'."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, template_id: str, payload: dict) -> str:
        return f"frame-{payload['frame']['global_index']}"


class StubQaGenerator(AnnotatorClient):
    """Emits schema-exact stage-2 JSON derived from the payload."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, template_id: str, payload: dict) -> str:
        video_id = payload["video_id"]
        ordinal = payload["ordinal"]
        task_type = payload["task_type"]
        captions = payload["captions"]
        question = (
            f"Regarding {video_id}, what does the {task_type.replace('_', ' ')} "
            f"around segment {payload['chunk_index']} show?"
        )
        if payload.get("want_negative"):
            rationale = []
        else:
            h = _digest(self.seed, video_id, ordinal, "rationale")
            count = 2 + h % 2
            step = max(1, len(captions) // (count + 1))
            rationale = [captions[(i + 1) * step - 1]["timestamp_label"]
                         for i in range(count)]
        if payload.get("want_multiple_choice"):
            correct = MC_LETTERS[_digest(self.seed, video_id, ordinal, "answer") % 5]
            options = {
                letter: (f"plausible description {letter}{ordinal}"
                         if letter != correct else f"grounded description {ordinal}")
                for letter in MC_LETTERS
            }
            body = {
                "question": question,
                "options": options,
                "correct_option": correct,
                "rationale_timestamps": rationale,
            }
        else:
            body = {
                "question": question,
                "answer": f"a concise answer about segment {payload['chunk_index']}",
                "rationale_timestamps": rationale,
            }
        return json.dumps(body)


class StubJudge(AnnotatorClient):
    """Scores hinted frames 5; everything else by seeded hash with roughly a
    third landing at 0, which keeps stubbed corpora near the expected
    relevant-frame rate."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, template_id: str, payload: dict) -> str:
        hinted = set(payload.get("hint_timestamps", []))
        scores = {}
        for frame in payload["frames"]:
            label = frame["timestamp_label"]
            if label in hinted:
                scores[label] = 5
            else:
                h = _digest(self.seed, payload["video_id"], label) % 9
                scores[label] = 0 if h < 3 else (h - 3) % 5 + 1
        return json.dumps(scores)


class ScriptedAnnotator(AnnotatorClient):
    """Replays queued responses for tests."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self.calls: list[tuple[str, dict]] = []

    def complete(self, template_id: str, payload: dict) -> str:
        self.calls.append((template_id, payload))
        if not self._responses:
            raise AnnotatorUnavailable("scripted annotator ran out of responses")
        return self._responses.pop(0)


# -- scheduling ---------------------------------------------------------------

def bucket_advance(ordinal: int, fraction: float) -> bool:
    """Deterministic scheduler: True when floor((i+1)*f) advances past
    floor(i*f). Over n ordinals the hit count is within 1 of n*f."""
    f = Fraction(str(fraction))
    return math.floor((ordinal + 1) * f) > math.floor(ordinal * f)


# -- stage 1: dense differential captioning ----------------------------------

def stage1_caption(
    pool: CandidatePool,
    captioner: AnnotatorClient,
    context_window: int = 3,
) -> list[FrameCaption]:
    """One differential caption per pool frame, in order.

    The prompt payload carries the most recent prior captions so the
    annotator can describe only what changed. Empty captions are retried
    once, then kept flagged with a placeholder.
    """
    if len(pool) == 0:
        raise EmptyPool(f"pool for video {pool.video_id!r} holds no frames")
    captions: list[FrameCaption] = []
    for frame in pool.frames:
        payload = {
            "video_id": pool.video_id,
            "frame": {
                "global_index": frame.global_index,
                "timestamp_s": frame.timestamp_s,
                "timestamp_label": format_mmss(frame.timestamp_s),
                "uri": frame.uri,
            },
            "prior_captions": [c.text for c in captions[-context_window:]],
        }
        text = captioner.complete("caption_differential", payload).strip()
        if not text:
            text = captioner.complete("caption_differential", payload).strip()
        if text:
            captions.append(FrameCaption(frame=frame, text=text))
        else:
            logger.warning("empty caption for frame %d of %s after retry",
                           frame.global_index, pool.video_id)
            captions.append(FrameCaption(frame=frame, text="(caption unavailable)",
                                         flagged=True))
    return captions


def chunk_captions(
    captions: Sequence[FrameCaption],
    chunk_size: int = 50,
) -> list[list[FrameCaption]]:
    """Consecutive disjoint chunks; the last one may be short."""
    if not captions:
        raise DataError("cannot chunk an empty caption list")
    return [list(captions[i : i + chunk_size]) for i in range(0, len(captions), chunk_size)]


# -- stage 2: QA construction with grounded frames ----------------------------

def _label_to_frame(label: str, frames: Sequence[FrameRef]) -> FrameRef:
    """Resolve an MM:SS rationale label to a frame, nearest-time fallback."""
    label = label.strip().strip("[]")
    for f in frames:
        if format_mmss(f.timestamp_s) == label:
            return f
    try:
        minutes, seconds = label.split(":")
        t = int(minutes) * 60 + int(seconds)
    except ValueError as exc:
        raise SchemaViolation(f"rationale timestamp {label!r} is not MM:SS") from exc
    return min(frames, key=lambda f: abs(f.timestamp_s - t))


def parse_stage2_output(text: str, chunk_frames: Sequence[FrameRef]) -> dict:
    """Validate a stage-2 generation against its output schema.

    Returns {question, options|None, answer, grounded: frozenset}.
    """
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"stage-2 output is not JSON: {exc}", raw_text=text) from exc
    if not isinstance(body, dict) or "question" not in body:
        raise SchemaViolation("stage-2 output is missing 'question'", raw_text=text)
    if "rationale_timestamps" not in body or not isinstance(body["rationale_timestamps"], list):
        raise SchemaViolation("stage-2 output is missing 'rationale_timestamps'",
                              raw_text=text)

    grounded = frozenset(
        _label_to_frame(label, chunk_frames).global_index
        for label in body["rationale_timestamps"]
    )
    if "options" in body:
        options = body["options"]
        if (not isinstance(options, dict)
                or sorted(options) != sorted(MC_LETTERS)
                or body.get("correct_option") not in MC_LETTERS):
            raise SchemaViolation("stage-2 multiple-choice block is malformed",
                                  raw_text=text)
        return {
            "question": str(body["question"]),
            "options": tuple(str(options[letter]) for letter in MC_LETTERS),
            "answer": str(body["correct_option"]),
            "grounded": grounded,
        }
    if "answer" not in body:
        raise SchemaViolation("stage-2 open-ended output is missing 'answer'",
                              raw_text=text)
    return {
        "question": str(body["question"]),
        "options": None,
        "answer": str(body["answer"]),
        "grounded": grounded,
    }


def stage2_generate(
    chunks: Sequence[Sequence[FrameCaption]],
    generator: AnnotatorClient,
    cfg: ForgeConfig,
    video_id: str,
    start_ordinal: int = 0,
) -> tuple[list[QASample], list[dict]]:
    """One QA sample per caption chunk.

    Task types round-robin over the configured twelve; the MC/open mix and
    the negative rate are enforced by deterministic scheduling over the
    run-global sample ordinal. A chunk whose generation violates the schema
    is retried once, then skipped (returned in the skip list).
    """
    samples: list[QASample] = []
    skipped: list[dict] = []
    for chunk_index, chunk in enumerate(chunks):
        ordinal = start_ordinal + chunk_index
        want_mc = bucket_advance(ordinal, cfg.mc_fraction)
        want_negative = bucket_advance(ordinal, cfg.negative_rate)
        task_type = cfg.task_types[ordinal % len(cfg.task_types)]
        payload = {
            "video_id": video_id,
            "chunk_index": chunk_index,
            "ordinal": ordinal,
            "task_type": task_type,
            "want_multiple_choice": want_mc,
            "want_negative": want_negative,
            "captions": [
                {
                    "timestamp_label": format_mmss(c.frame.timestamp_s),
                    "text": c.text,
                }
                for c in chunk
            ],
        }
        chunk_frames = [c.frame for c in chunk]
        parsed = None
        for attempt in (0, 1):
            try:
                parsed = parse_stage2_output(
                    generator.complete("qa_generation", payload), chunk_frames
                )
                break
            except SchemaViolation as exc:
                if attempt == 1:
                    logger.warning("skipping chunk %d of %s: %s", chunk_index, video_id, exc)
                    skipped.append({"chunk_index": chunk_index, "reason": str(exc)})
        if parsed is None:
            continue
        grounded = frozenset() if want_negative else parsed["grounded"]
        samples.append(
            QASample(
                video_id=video_id,
                question=parsed["question"],
                options=parsed["options"],
                answer=parsed["answer"],
                task_type=task_type,
                grounded_frames=grounded,
                candidate_relevant=grounded,
                scored_relevant={},
                is_negative=want_negative,
                sample_id=f"{video_id}:{chunk_index:04d}",
            )
        )
    return samples, skipped


# -- stage 3: extend relevant frames by similarity ----------------------------

def retrieval_ratio(sample: QASample, n_total: int) -> RetrievalRatio:
    """Current retrieval ratio: relevant (candidate) frames over the total
    captioned frames."""
    return RetrievalRatio(n_grd=len(sample.candidate_relevant), n_total=n_total)


def stage3_extend(
    sample: QASample,
    pool: CandidatePool,
    sim_backend: SimilarityBackend,
    target_ratio: float = 0.30,
) -> QASample:
    """Add non-grounded frames in descending query similarity until the
    retrieval ratio reaches the target or the pool is exhausted. Grounded
    frames are always retained."""
    if sample.is_negative:
        return sample
    n_total = len(pool)
    target = math.ceil(Fraction(str(target_ratio)) * n_total)
    if len(sample.candidate_relevant) >= target:
        return sample

    query = sample.question
    if sample.options:
        query = query + " " + " ".join(sample.options)
    sims = sim_backend.score_frames(pool.frames, query)
    ranked = sorted(
        (
            (frame, sim)
            for frame, sim in zip(pool.frames, sims)
            if frame.global_index not in sample.candidate_relevant
        ),
        key=lambda fs: (-fs[1], fs[0].timestamp_s, fs[0].global_index),
    )
    needed = target - len(sample.candidate_relevant)
    added = frozenset(frame.global_index for frame, _ in ranked[:needed])
    return replace(sample, candidate_relevant=sample.candidate_relevant | added)


# -- stage 4: fine-grained confidence scoring ---------------------------------

def parse_stage4_output(text: str) -> dict[str, int] | None:
    """Parse judge output {"[MM:SS]": score, ...}; None means low quality."""
    if LOW_QUALITY_SIGNAL in text.lower():
        return None
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"stage-4 output is not JSON: {exc}", raw_text=text) from exc
    if not isinstance(body, dict):
        raise SchemaViolation("stage-4 output is not a JSON object", raw_text=text)
    scores = {}
    for label, value in body.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(f"stage-4 score for {label!r} is not numeric",
                                  raw_text=text)
        scores[str(label).strip().strip("[]")] = int(value)
    return scores


def stage4_score(
    sample: QASample,
    pool: CandidatePool,
    judge: AnnotatorClient,
    cfg: ForgeConfig | None = None,
) -> QASample | None:
    """Score every candidate relevant frame 0..5 via the judge.

    The prompt hints that stage-2 grounded frames are highly relevant; the
    judge's returned value is kept either way, clipped into range. Returns
    None when the judge flags the question as low quality.
    """
    cfg = cfg or ForgeConfig()
    if sample.is_negative or not sample.candidate_relevant:
        return replace(sample, scored_relevant={})

    by_label: dict[str, FrameRef] = {}
    frames_payload = []
    for frame in pool.frames:
        if frame.global_index not in sample.candidate_relevant:
            continue
        label = format_mmss(frame.timestamp_s)
        by_label[label] = frame
        frames_payload.append(
            {"timestamp_label": label, "global_index": frame.global_index,
             "uri": frame.uri}
        )
    hint = [format_mmss(f.timestamp_s) for f in pool.frames
            if f.global_index in sample.grounded_frames]

    question = sample.question
    if sample.options:
        question = question + "\n" + "\n".join(
            f"{letter}. {opt}" for letter, opt in zip(MC_LETTERS, sample.options)
        )
    payload = {
        "video_id": sample.video_id,
        "query": question,
        "frames": frames_payload,
        "hint_timestamps": hint,
    }
    raw_scores = parse_stage4_output(judge.complete("relevance_scoring", payload))
    if raw_scores is None:
        return None

    scored: dict[int, int] = {}
    for label, frame in by_label.items():
        value = raw_scores.get(label, 0)
        scored[frame.global_index] = max(cfg.score_min, min(cfg.score_max, value))
    return replace(sample, scored_relevant=scored)


# -- timestamp-label aggregation ----------------------------------------------

def _normalize_label(label):
    if isinstance(label, (list, tuple)):
        return tuple(float(x) for x in label)
    return int(label)


def aggregate_et(records: Sequence[EtRecord]) -> list[EtRecord]:
    """Merge records per video: queries concatenated as a numbered list,
    timestamp labels unioned, per-query label sets kept as provenance.
    Singleton videos pass through unchanged."""
    grouped: dict[str, list[EtRecord]] = {}
    order: list[str] = []
    for rec in records:
        if rec.video_id not in grouped:
            order.append(rec.video_id)
        grouped.setdefault(rec.video_id, []).append(rec)

    out: list[EtRecord] = []
    for video_id in order:
        group = grouped[video_id]
        if len(group) == 1:
            out.append(group[0])
            continue
        query = "\n".join(f"{i}. {rec.query}" for i, rec in enumerate(group, start=1))
        union = sorted(
            {_normalize_label(lb) for rec in group for lb in rec.timestamp_labels},
            key=lambda lb: (isinstance(lb, tuple), lb),
        )
        tags = sorted({rec.task_tag for rec in group if rec.task_tag})
        out.append(
            EtRecord(
                video_id=video_id,
                query=query,
                timestamp_labels=tuple(union),
                task_tag="+".join(tags),
                per_query=tuple(
                    (rec.query, tuple(_normalize_label(lb) for lb in rec.timestamp_labels))
                    for rec in group
                ),
            )
        )
    return out


# -- dataset records and statistics -------------------------------------------

def sample_to_record(sample: QASample, pool: CandidatePool) -> dict:
    return {
        "schema_version": 1,
        "sample_id": sample.sample_id,
        "video_id": sample.video_id,
        "duration_s": pool.source_duration_s,
        "n_total": len(pool),
        "question": sample.question,
        "options": list(sample.options) if sample.options else None,
        "answer": sample.answer,
        "task_type": sample.task_type,
        "is_negative": sample.is_negative,
        "grounded_frames": sorted(sample.grounded_frames),
        "candidate_relevant": sorted(sample.candidate_relevant),
        "scored_relevant": {str(k): v for k, v in sorted(sample.scored_relevant.items())},
    }


def validate_record(rec: dict) -> None:
    """Schema check for one final dataset record; raises SchemaViolation."""
    required = (
        "schema_version", "sample_id", "video_id", "duration_s", "n_total",
        "question", "answer", "task_type", "is_negative",
        "grounded_frames", "candidate_relevant", "scored_relevant",
    )
    for key in required:
        if key not in rec:
            raise SchemaViolation(f"dataset record is missing {key!r}")
    grounded = set(rec["grounded_frames"])
    candidate = set(rec["candidate_relevant"])
    if not grounded <= candidate:
        raise SchemaViolation("grounded_frames escape candidate_relevant")
    if rec["options"] is not None and len(rec["options"]) != 5:
        raise SchemaViolation("options must hold exactly 5 entries")
    for key, value in rec["scored_relevant"].items():
        if int(key) not in candidate:
            raise SchemaViolation(f"scored frame {key} is not a candidate")
        if not 0 <= int(value) <= 5:
            raise SchemaViolation(f"score {value} outside 0..5")
    if rec["is_negative"] and any(int(v) > 0 for v in rec["scored_relevant"].values()):
        raise SchemaViolation("negative sample carries a positive score")


def dataset_stats(records: Sequence[dict]) -> dict:
    """Corpus-level report: counts, durations, relevance rate, score
    histogram, negative fraction, and the task-type distribution."""
    if not records:
        raise DataError("cannot compute statistics of an empty dataset")
    histogram = {str(s): 0 for s in range(6)}
    rates = []
    task_counts: dict[str, int] = {}
    negatives = 0
    durations = []
    for rec in records:
        durations.append(float(rec["duration_s"]))
        task_counts[rec["task_type"]] = task_counts.get(rec["task_type"], 0) + 1
        if rec["is_negative"]:
            negatives += 1
        relevant = 0
        for value in rec["scored_relevant"].values():
            histogram[str(int(value))] += 1
            if int(value) > 0:
                relevant += 1
        rates.append(relevant / rec["n_total"])
    return {
        "n_samples": len(records),
        "mean_duration_s": sum(durations) / len(durations),
        "mean_relevance_rate": sum(rates) / len(rates),
        "score_histogram": histogram,
        "negative_fraction": negatives / len(records),
        "task_type_distribution": dict(sorted(task_counts.items())),
    }


# -- resumable run directory ---------------------------------------------------

def _stage_path(run_dir: str | Path, video_id: str, stage: int) -> Path:
    return Path(run_dir) / video_id / f"stage{stage}.jsonl"


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _captions_from_rows(rows: Sequence[dict]) -> list[FrameCaption]:
    return [
        FrameCaption(
            frame=FrameRef(
                global_index=row["global_index"],
                timestamp_s=row["timestamp_s"],
                uri=row["uri"],
            ),
            text=row["text"],
            flagged=row.get("flagged", False),
        )
        for row in rows
    ]


def _pool_from_stage1(video_id: str, rows: Sequence[dict], cfg: ForgeConfig) -> CandidatePool:
    frames = [
        FrameRef(row["global_index"], row["timestamp_s"], row["uri"]) for row in rows
    ]
    return pool_from_frames(video_id, frames, sample_ratio=cfg.caption_fps)


def _sample_from_row(row: dict) -> QASample:
    return QASample(
        video_id=row["video_id"],
        question=row["question"],
        options=tuple(row["options"]) if row.get("options") else None,
        answer=row["answer"],
        task_type=row["task_type"],
        grounded_frames=frozenset(row["grounded_frames"]),
        candidate_relevant=frozenset(row["candidate_relevant"]),
        scored_relevant={int(k): int(v) for k, v in row.get("scored_relevant", {}).items()},
        is_negative=row["is_negative"],
        sample_id=row["sample_id"],
    )


class ForgeRun:
    """Stage orchestration over a run directory.

    Every stage writes one JSONL artifact per video and skips videos whose
    artifact already exists, so interrupted runs resume where they stopped.
    Identical seeds and stub annotators reproduce byte-identical artifacts.
    """

    def __init__(self, run_dir: str | Path, cfg: ForgeConfig | None = None, jobs: int = 1):
        self.run_dir = Path(run_dir)
        self.cfg = cfg or ForgeConfig()
        self.jobs = max(1, jobs)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        marker = self.run_dir / "forge.json"
        if marker.exists():
            recorded = json.loads(marker.read_text(encoding="utf-8"))
            if recorded != self.cfg.to_dict():
                raise DataError(
                    "run directory was created with a different forge configuration"
                )
        else:
            marker.write_text(
                json.dumps(self.cfg.to_dict(), sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )

    # ordering is the backbone of resumable determinism: videos sort by id
    def video_ids(self) -> list[str]:
        return sorted(
            p.name for p in self.run_dir.iterdir()
            if p.is_dir() and (p / "stage1.jsonl").exists()
        )

    def _map_videos(self, video_ids, fn):
        if self.jobs > 1 and len(video_ids) > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as tp:
                list(tp.map(fn, video_ids))
        else:
            for vid in video_ids:
                fn(vid)

    def run_stage1(self, pools: Sequence[CandidatePool], captioner: AnnotatorClient) -> None:
        def one(pool: CandidatePool) -> None:
            path = _stage_path(self.run_dir, pool.video_id, 1)
            if path.exists():
                return
            captions = stage1_caption(pool, captioner)
            _write_jsonl(path, [
                {
                    "global_index": c.frame.global_index,
                    "timestamp_s": c.frame.timestamp_s,
                    "uri": c.frame.uri,
                    "text": c.text,
                    "flagged": c.flagged,
                }
                for c in captions
            ])

        ordered = sorted(pools, key=lambda p: p.video_id)
        if self.jobs > 1 and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as tp:
                list(tp.map(one, ordered))
        else:
            for pool in ordered:
                one(pool)

    def _chunk_counts(self) -> dict[str, int]:
        counts = {}
        for vid in self.video_ids():
            rows = _read_jsonl(_stage_path(self.run_dir, vid, 1))
            counts[vid] = math.ceil(len(rows) / self.cfg.chunk_size)
        return counts

    def run_stage2(self, generator: AnnotatorClient) -> None:
        counts = self._chunk_counts()
        offset = 0
        offsets = {}
        for vid in self.video_ids():
            offsets[vid] = offset
            offset += counts[vid]

        def one(vid: str) -> None:
            path = _stage_path(self.run_dir, vid, 2)
            if path.exists():
                return
            rows = _read_jsonl(_stage_path(self.run_dir, vid, 1))
            pool = _pool_from_stage1(vid, rows, self.cfg)
            chunks = chunk_captions(_captions_from_rows(rows), self.cfg.chunk_size)
            samples, skipped = stage2_generate(
                chunks, generator, self.cfg, vid, start_ordinal=offsets[vid]
            )
            out = [sample_to_record(s, pool) for s in samples]
            out.extend({"skipped_chunk": s["chunk_index"], "reason": s["reason"]}
                       for s in skipped)
            _write_jsonl(path, out)

        self._map_videos(self.video_ids(), one)

    def run_stage3(self, sim_backend: SimilarityBackend) -> None:
        def one(vid: str) -> None:
            path = _stage_path(self.run_dir, vid, 3)
            if path.exists():
                return
            stage1_rows = _read_jsonl(_stage_path(self.run_dir, vid, 1))
            pool = _pool_from_stage1(vid, stage1_rows, self.cfg)
            out = []
            for row in _read_jsonl(_stage_path(self.run_dir, vid, 2)):
                if "skipped_chunk" in row:
                    continue
                extended = stage3_extend(
                    _sample_from_row(row), pool, sim_backend, self.cfg.target_ratio
                )
                out.append(sample_to_record(extended, pool))
            _write_jsonl(path, out)

        self._map_videos(self.video_ids(), one)

    def run_stage4(self, judge: AnnotatorClient) -> None:
        def one(vid: str) -> None:
            path = _stage_path(self.run_dir, vid, 4)
            if path.exists():
                return
            stage1_rows = _read_jsonl(_stage_path(self.run_dir, vid, 1))
            pool = _pool_from_stage1(vid, stage1_rows, self.cfg)
            out = []
            for row in _read_jsonl(_stage_path(self.run_dir, vid, 3)):
                sample = _sample_from_row(row)
                scored = None
                failure = None
                for attempt in (0, 1):
                    try:
                        scored = stage4_score(sample, pool, judge, self.cfg)
                        failure = None
                        break
                    except SchemaViolation as exc:
                        failure = f"schema: {exc}"
                if failure is not None:
                    out.append({"dropped": sample.sample_id, "reason": failure})
                elif scored is None:
                    out.append({"dropped": sample.sample_id, "reason": "low quality"})
                else:
                    out.append(sample_to_record(scored, pool))
            _write_jsonl(path, out)

        self._map_videos(self.video_ids(), one)

    def write_dataset(self) -> Path:
        """Concatenate per-video stage-4 outputs into dataset.jsonl."""
        rows = []
        for vid in self.video_ids():
            for row in _read_jsonl(_stage_path(self.run_dir, vid, 4)):
                if "dropped" in row:
                    continue
                validate_record(row)
                rows.append(row)
        path = self.run_dir / "dataset.jsonl"
        _write_jsonl(path, rows)
        return path
