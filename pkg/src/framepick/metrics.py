"""Temporal grounding, frame retrieval, and QA accuracy metrics.

Conventions: grounding intervals are half-open [start, end); a selected
frame at timestamp t with sampling period p contributes [t, t+p), which
keeps single-frame predictions well-defined.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Sequence

from .engine import SamplePlan
from .errors import EmptyAnnotation, EmptyPlan, LengthMismatch

DEFAULT_IOU_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class TimeInterval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s < 0:
            raise ValueError(f"start_s must be >= 0, got {self.start_s}")
        if self.end_s < self.start_s:
            raise ValueError(f"end_s {self.end_s} precedes start_s {self.start_s}")

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


@dataclass
class GroundingResult:
    r1_at: dict[float, float]
    miou: float
    per_item_iou: list[float] = field(default_factory=list)


@dataclass
class RetrievalEval:
    recall: float
    precision: float
    k_used: int


@dataclass
class QaResult:
    accuracy: float
    n_items: int
    n_correct: int
    n_unextractable: int
    letters: list[str | None] = field(default_factory=list)


def interval_iou(a: TimeInterval, b: TimeInterval) -> float:
    """|a n b| / |a u b| over half-open intervals; symmetric, in [0, 1].

    When both intervals are zero-length the union has no measure; identical
    points count as a perfect match, anything else as a miss.
    """
    inter = max(0.0, min(a.end_s, b.end_s) - max(a.start_s, b.start_s))
    union = a.length + b.length - inter
    if union <= 0.0:
        return 1.0 if (a.start_s, a.end_s) == (b.start_s, b.end_s) else 0.0
    return inter / union


def grounding_metrics(
    preds: Sequence[TimeInterval | None],
    gts: Sequence[TimeInterval],
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
) -> GroundingResult:
    """Recall@1 at each IoU threshold plus mean IoU over paired items.

    Items are paired positionally; an absent prediction (None) scores 0.
    """
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not gts:
        raise LengthMismatch("no items to evaluate")

    ious = []
    for pred, gt in zip(preds, gts):
        ious.append(0.0 if pred is None else interval_iou(pred, gt))
    r1 = {
        float(th): sum(1 for x in ious if x >= th) / len(ious)
        for th in thresholds
    }
    return GroundingResult(r1_at=r1, miou=sum(ious) / len(ious), per_item_iou=ious)


def plan_to_interval(plan: SamplePlan, period_s: float | None = None) -> TimeInterval:
    """Collapse a plan to one grounding interval.

    Takes the maximal-score contiguous run of selected frames (contiguity =
    consecutive candidate-pool indices; run score = max member score; ties
    go to the longer run, then the earlier start) and spans its first to
    last timestamp plus one sampling period.
    """
    if not plan.selected:
        raise EmptyPlan("cannot derive an interval from an empty plan")
    period = plan.sample_period_s if period_s is None else period_s

    frames = sorted(plan.selected, key=lambda it: it.frame.global_index)
    runs = []
    current = [frames[0]]
    for item in frames[1:]:
        if item.frame.global_index == current[-1].frame.global_index + 1:
            current.append(item)
        else:
            runs.append(current)
            current = [item]
    runs.append(current)

    def run_rank(run):
        score = max(it.score for it in run)
        return (-score, -len(run), run[0].frame.timestamp_s)

    best = min(runs, key=run_rank)
    return TimeInterval(best[0].frame.timestamp_s, best[-1].frame.timestamp_s + period)


def frame_recall(plan: SamplePlan, annotated: set[int]) -> RetrievalEval:
    """Recall and precision of selected global indices vs an annotated set."""
    if not annotated:
        raise EmptyAnnotation("annotated frame set is empty")
    selected = {it.frame.global_index for it in plan.selected}
    hit = len(selected & annotated)
    recall = hit / len(annotated)
    precision = hit / len(selected) if selected else 0.0
    return RetrievalEval(recall=recall, precision=precision, k_used=len(selected))


_LETTER_RE = re.compile(r"(?<![A-Za-z0-9])\(?([A-Ea-e])\)?(?![A-Za-z0-9])")


def extract_answer_letter(text: str) -> str | None:
    """First standalone A-E token in free text, parenthesized or bare,
    case-insensitive; None when no such token exists."""
    match = _LETTER_RE.search(text)
    return match.group(1).upper() if match else None


def qa_accuracy(predicted: Sequence[str], gold: Sequence[str]) -> float:
    """Fraction of predictions whose extracted letter matches the gold one.

    Unextractable predictions count as wrong (see qa_report for the count).
    """
    return qa_report(predicted, gold).accuracy


def qa_report(predicted: Sequence[str], gold: Sequence[str]) -> QaResult:
    if len(predicted) != len(gold):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} gold answers")
    if not gold:
        raise LengthMismatch("no items to evaluate")
    letters = [extract_answer_letter(p) for p in predicted]
    correct = sum(
        1 for letter, g in zip(letters, gold) if letter is not None and letter == g.strip().upper()
    )
    return QaResult(
        accuracy=correct / len(gold),
        n_items=len(gold),
        n_correct=correct,
        n_unextractable=sum(1 for letter in letters if letter is None),
        letters=letters,
    )


# -- record files -------------------------------------------------------------

def load_interval_records(path: str) -> dict[str, TimeInterval]:
    """Newline-delimited {item_id, start_s, end_s} records keyed by item."""
    records = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records[str(rec["item_id"])] = TimeInterval(
                float(rec["start_s"]), float(rec["end_s"])
            )
    return records


def load_answer_records(path: str) -> dict[str, str]:
    """Newline-delimited {item_id, answer} records keyed by item."""
    records = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records[str(rec["item_id"])] = str(rec["answer"])
    return records


def pair_by_item(preds: dict, gts: dict) -> tuple[list, list]:
    """Align two record maps on item_id, raising on any mismatch."""
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise LengthMismatch(
            f"unmatched item ids (missing from predictions: {missing[:5]}, "
            f"unknown to ground truth: {extra[:5]})"
        )
    keys = sorted(gts)
    return [preds[k] for k in keys], [gts[k] for k in keys]


def grounding_report_dict(result: GroundingResult) -> dict:
    return {
        "r1": {f"{th:g}": value for th, value in sorted(result.r1_at.items())},
        "miou": result.miou,
        "n_items": len(result.per_item_iou),
    }


def grounding_report_table(result: GroundingResult) -> str:
    parts = [f"R1@{th:g}: {value:.4f}" for th, value in sorted(result.r1_at.items())]
    parts.append(f"mIoU: {result.miou:.4f}")
    parts.append(f"n: {len(result.per_item_iou)}")
    return "  ".join(parts)
