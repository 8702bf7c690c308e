"""Window scoring orchestration, deterministic merge, and top-K selection.

The inference flow: partition the candidate pool into retrieval windows,
score each window (concurrently) through a pluggable backend, merge the
per-window results into one canonical set, then select the top
K = min(N_ret, N_ctx) frames. A coarse-to-fine hybrid variant prefilters
the pool by similarity down to one 256-frame window before generative
scoring.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .backends import (
    DEFAULT_DECODE,
    GenerativeBackend,
    ScoreRequest,
    SimilarityBackend,
)
from .errors import (
    BackendError,
    BackendUnavailable,
    DataError,
    DuplicateFrame,
    MalformedOutput,
    ParseError,
    PrefilterExceedsWindow,
    WindowTooLarge,
)
from .frames import (
    CandidatePool,
    FrameRef,
    RetrievalWindow,
    denormalize,
    normalize_window,
    partition_windows,
)
from .prompts import TemplateStore, render_window_prompt
from .relevance import expand_entries, parse_relevance_output

logger = logging.getLogger(__name__)

TRANSPORT_RETRIES = 2
MALFORMED_RETRIES = 1


@dataclass(frozen=True)
class ScoredFrame:
    """One frame with its relevance score and scoring provenance."""

    frame: FrameRef
    score: float
    window_id: int
    scorer_tag: str
    raw_span: str | None = None


@dataclass(frozen=True)
class ScoredFrameSet:
    """Scored frames from one or more windows of a single scorer kind."""

    items: tuple[ScoredFrame, ...]
    kind: str = "generative"

    def __post_init__(self):
        seen = set()
        for it in self.items:
            g = it.frame.global_index
            if g in seen:
                raise DuplicateFrame(f"global_index {g} appears twice in one set")
            seen.add(g)
            if self.kind == "generative":
                if it.score != int(it.score) or not 0 <= it.score <= 5:
                    raise DataError(f"generative score {it.score} outside 0..5")
            elif self.kind == "similarity":
                if not -1.0 <= it.score <= 1.0:
                    raise DataError(f"similarity score {it.score} outside [-1, 1]")

    @property
    def n_ret(self) -> int:
        """Retrievable frame count: score > 0 for generative scorers,
        every scored frame for similarity/uniform (budget-limited) ones."""
        if self.kind == "generative":
            return sum(1 for it in self.items if it.score > 0)
        return len(self.items)

    def relevant(self) -> list[ScoredFrame]:
        if self.kind == "generative":
            return [it for it in self.items if it.score > 0]
        return list(self.items)


@dataclass(frozen=True)
class SamplePlan:
    """The final selection: K frames in emission order, with provenance."""

    video_id: str
    query: str
    selected: tuple[ScoredFrame, ...]
    k: int
    n_ctx: int
    emission_order: str
    sample_period_s: float = 1.0
    incidents: tuple[str, ...] = ()


@dataclass
class SampleConfig:
    """Engine knobs; defaults mirror the best inference configuration
    (1 fps candidate pools, 256-frame windows)."""

    window_capacity: int = 256
    stride: int | None = None
    n_ctx: int = 256
    emission_order: str = "chronological"
    parse_mode: str = "lenient"
    task_prompt_id: str = "window_scoring"
    jobs: int = 4
    on_error: str = "skip"
    dedup: str = "error"
    decode: dict = field(default_factory=lambda: dict(DEFAULT_DECODE))
    options: tuple[str, ...] | None = None
    subtitles: tuple[tuple[float, str], ...] | None = None
    template_dir: str | None = None
    transport_retries: int = TRANSPORT_RETRIES
    malformed_retries: int = MALFORMED_RETRIES

    def template_store(self) -> TemplateStore:
        return TemplateStore(self.template_dir)


def _sort_key(item: ScoredFrame):
    return (-item.score, item.frame.timestamp_s, item.frame.global_index)


def score_window(
    backend,
    window: RetrievalWindow,
    query: str,
    options: Sequence[str] | None = None,
    subtitles: Sequence[tuple[float, str]] | None = None,
    task_prompt_id: str = "window_scoring",
    parse_mode: str = "lenient",
    decode: dict | None = None,
    store: TemplateStore | None = None,
    transport_retries: int = TRANSPORT_RETRIES,
    malformed_retries: int = MALFORMED_RETRIES,
) -> ScoredFrameSet:
    """Score one window through a backend.

    Generative path: render prompt -> completion -> parse -> expand ->
    denormalize. Similarity path: per-frame embedding similarity. Transport
    failures retry twice; strict-mode malformed output retries once with a
    format reminder appended, then the error propagates.
    """
    if window.n > backend.max_window_n:
        raise WindowTooLarge(
            f"window of {window.n} frames exceeds backend capacity {backend.max_window_n}"
        )

    if isinstance(backend, SimilarityBackend):
        sims = backend.score_frames(window.members, query)
        if len(sims) != window.n:
            raise BackendError(
                f"similarity backend returned {len(sims)} scores for {window.n} frames"
            )
        items = tuple(
            ScoredFrame(frame=m, score=float(s), window_id=window.window_id,
                        scorer_tag=backend.tag)
            for m, s in zip(window.members, sims)
        )
        return ScoredFrameSet(items=items, kind="similarity")

    if not isinstance(backend, GenerativeBackend):
        raise DataError(f"backend kind {backend.kind!r} cannot score windows")

    store = store or TemplateStore()
    prompt = render_window_prompt(
        window, query, options=options, subtitles=subtitles,
        task_prompt_id=task_prompt_id, store=store,
    )
    request = ScoreRequest(
        window=window,
        prompt=prompt,
        query=query,
        options=tuple(options) if options else None,
        subtitles=tuple(subtitles) if subtitles else None,
        task_prompt_id=task_prompt_id,
        decode=dict(decode) if decode else dict(DEFAULT_DECODE),
    )

    text = _complete_with_retries(backend, request, parse_mode, store,
                                  transport_retries, malformed_retries)
    parsed = parse_relevance_output(text, mode=parse_mode)
    local_scores = expand_entries(parsed.entries, window.n, mode=parse_mode)

    items = []
    for local in sorted(local_scores):
        frame = denormalize(window, local)
        items.append(
            ScoredFrame(
                frame=frame,
                score=local_scores[local],
                window_id=window.window_id,
                scorer_tag=backend.tag,
                raw_span=_winning_span(parsed.entries, local, local_scores[local]),
            )
        )
    return ScoredFrameSet(items=tuple(items), kind="generative")


def _winning_span(entries, local: int, score: int) -> str | None:
    for e in entries:
        if e.start_local <= local <= e.end_local and e.score == score:
            if e.start_local == e.end_local:
                return str(e.start_local)
            return f"{e.start_local}-{e.end_local}"
    return None


def _complete_with_retries(backend, request: ScoreRequest, parse_mode: str,
                           store: TemplateStore,
                           transport_retries: int = TRANSPORT_RETRIES,
                           malformed_retries: int = MALFORMED_RETRIES) -> str:
    transport_left = transport_retries
    malformed_left = malformed_retries
    while True:
        try:
            text = backend.complete(request)
        except BackendUnavailable:
            if transport_left == 0:
                raise
            transport_left -= 1
            logger.warning("window %d: transport failure, retrying", request.window.window_id)
            continue
        if parse_mode == "strict":
            try:
                parse_relevance_output(text, mode="strict")
            except ParseError as exc:
                if malformed_left == 0:
                    raise MalformedOutput(str(exc), raw_text=text) from exc
                malformed_left -= 1
                request = replace(request, format_reminder=store.get("format_reminder").strip())
                logger.warning("window %d: malformed output, retrying with reminder",
                               request.window.window_id)
                continue
        return text


def merge_window_results(
    results: Sequence[ScoredFrameSet],
    dedup: str = "error",
) -> ScoredFrameSet:
    """Union per-window results into one canonically ordered set.

    The output is a pure function of the input *set*: any arrival order of
    the same window results serializes identically. Duplicate global frames
    (overlapping windows) raise DuplicateFrame unless dedup="max", which
    keeps the highest score (lowest window_id on ties).
    """
    if dedup not in ("error", "max"):
        raise ValueError(f"unknown dedup policy {dedup!r}")
    kinds = {r.kind for r in results}
    if len(kinds) > 1:
        raise DataError(f"cannot merge mixed scorer kinds: {sorted(kinds)}")
    kind = kinds.pop() if kinds else "generative"

    by_global: dict[int, ScoredFrame] = {}
    for result in sorted(results, key=lambda r: tuple(sorted(i.window_id for i in r.items)) or (0,)):
        for item in result.items:
            g = item.frame.global_index
            prev = by_global.get(g)
            if prev is None:
                by_global[g] = item
            elif dedup == "error":
                raise DuplicateFrame(
                    f"frame {g} arrived from windows {prev.window_id} and {item.window_id}"
                )
            elif (item.score, -item.window_id) > (prev.score, -prev.window_id):
                by_global[g] = item

    ordered = tuple(sorted(by_global.values(), key=_sort_key))
    return ScoredFrameSet(items=ordered, kind=kind)


def select_top_k(
    scored: ScoredFrameSet,
    n_ctx: int,
    emission_order: str = "chronological",
    video_id: str = "",
    query: str = "",
    sample_period_s: float = 1.0,
    incidents: Sequence[str] = (),
) -> SamplePlan:
    """Pick the K = min(N_ret, N_ctx) best frames.

    Selection ranks by score descending, then earlier timestamp, then lower
    global index; the selected frames are re-ordered for emission
    (chronological by default, by_score keeps the ranking).
    """
    if n_ctx < 1:
        raise DataError(f"n_ctx must be >= 1, got {n_ctx}")
    if emission_order not in ("chronological", "by_score"):
        raise DataError(f"unknown emission_order {emission_order!r}")

    relevant = sorted(scored.relevant(), key=_sort_key)
    k = min(scored.n_ret, n_ctx)
    chosen = relevant[:k]
    if emission_order == "chronological":
        chosen = sorted(chosen, key=lambda it: (it.frame.timestamp_s, it.frame.global_index))
    return SamplePlan(
        video_id=video_id,
        query=query,
        selected=tuple(chosen),
        k=k,
        n_ctx=n_ctx,
        emission_order=emission_order,
        sample_period_s=sample_period_s,
        incidents=tuple(incidents),
    )


def _score_windows(
    backend,
    windows: Sequence[RetrievalWindow],
    query: str,
    config: SampleConfig,
    store: TemplateStore,
) -> tuple[list[ScoredFrameSet], list[str]]:
    incidents: list[str] = []

    def run_one(window: RetrievalWindow) -> ScoredFrameSet:
        try:
            return score_window(
                backend, window, query,
                options=config.options,
                subtitles=config.subtitles,
                task_prompt_id=config.task_prompt_id,
                parse_mode=config.parse_mode,
                decode=config.decode,
                store=store,
                transport_retries=config.transport_retries,
                malformed_retries=config.malformed_retries,
            )
        except (BackendError, ParseError) as exc:
            if config.on_error == "fail":
                raise
            incidents.append(f"window {window.window_id}: {type(exc).__name__}: {exc}")
            return ScoredFrameSet(items=(), kind=backend.score_kind
                                  if backend.score_kind in ("generative", "similarity")
                                  else "generative")

    if config.jobs > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(run_one, windows))
    else:
        results = [run_one(w) for w in windows]
    return results, incidents


def sample(
    pool: CandidatePool,
    query: str,
    backend,
    config: SampleConfig | None = None,
) -> SamplePlan:
    """Full inference pass: partition, score windows concurrently, merge,
    select top K. A uniform backend short-circuits to evenly spaced frames
    covering the whole pool (the classic baseline)."""
    config = config or SampleConfig()

    if getattr(backend, "kind", None) == "uniform":
        k = min(len(pool), config.n_ctx)
        idx = np.linspace(0, len(pool) - 1, k).astype(int) if k else np.array([], dtype=int)
        selected = tuple(
            ScoredFrame(frame=pool.frames[i], score=1.0, window_id=0, scorer_tag="uniform")
            for i in idx
        )
        return SamplePlan(
            video_id=pool.video_id,
            query=query,
            selected=selected,
            k=k,
            n_ctx=config.n_ctx,
            emission_order="chronological",
            sample_period_s=pool.sample_period_s,
        )

    store = config.template_store()
    windows = partition_windows(pool, config.window_capacity, config.stride)
    results, incidents = _score_windows(backend, windows, query, config, store)

    stride = config.stride if config.stride is not None else config.window_capacity
    dedup = "max" if stride < config.window_capacity else config.dedup
    merged = merge_window_results(results, dedup=dedup)
    return select_top_k(
        merged,
        config.n_ctx,
        emission_order=config.emission_order,
        video_id=pool.video_id,
        query=query,
        sample_period_s=pool.sample_period_s,
        incidents=incidents,
    )


def hybrid_sample(
    pool: CandidatePool,
    query: str,
    sim_backend: SimilarityBackend,
    gen_backend: GenerativeBackend,
    prefilter_k: int = 256,
    config: SampleConfig | None = None,
) -> SamplePlan:
    """Coarse-to-fine sampling: similarity-prefilter the whole pool down to
    the top ``prefilter_k`` frames, re-sort them temporally into a single
    window, then run one generative scoring pass and select top K."""
    config = config or SampleConfig()
    if prefilter_k < 1:
        raise DataError(f"prefilter_k must be >= 1, got {prefilter_k}")
    if prefilter_k > config.window_capacity:
        raise PrefilterExceedsWindow(
            f"prefilter_k {prefilter_k} exceeds the window capacity {config.window_capacity}"
        )
    if len(pool) == 0:
        raise DataError(f"pool for video {pool.video_id!r} holds no frames")

    sims = sim_backend.score_frames(pool.frames, query)
    if len(sims) != len(pool):
        raise BackendError(
            f"similarity backend returned {len(sims)} scores for {len(pool)} frames"
        )
    ranked = sorted(
        zip(pool.frames, sims),
        key=lambda fs: (-fs[1], fs[0].timestamp_s, fs[0].global_index),
    )
    survivors = sorted(
        (f for f, _ in ranked[:prefilter_k]),
        key=lambda f: (f.timestamp_s, f.global_index),
    )
    window = normalize_window(survivors, window_id=0, capacity=config.window_capacity)

    store = config.template_store()
    results, incidents = _score_windows(gen_backend, [window], query, config, store)
    merged = merge_window_results(results, dedup=config.dedup)
    return select_top_k(
        merged,
        config.n_ctx,
        emission_order=config.emission_order,
        video_id=pool.video_id,
        query=query,
        sample_period_s=pool.sample_period_s,
        incidents=incidents,
    )


def plan_to_dict(plan: SamplePlan, config_echo: dict | None = None) -> dict:
    """Stable dict form of a plan (the plan-file schema)."""
    return {
        "schema_version": 1,
        "video_id": plan.video_id,
        "query": plan.query,
        "k": plan.k,
        "n_ctx": plan.n_ctx,
        "emission_order": plan.emission_order,
        "sample_period_s": plan.sample_period_s,
        "selected": [
            {
                "global_index": it.frame.global_index,
                "timestamp_s": it.frame.timestamp_s,
                "score": it.score,
                "window_id": it.window_id,
            }
            for it in plan.selected
        ],
        "provenance": {
            "frames": [
                {
                    "global_index": it.frame.global_index,
                    "window_id": it.window_id,
                    "raw_span": it.raw_span,
                    "scorer_tag": it.scorer_tag,
                }
                for it in plan.selected
            ],
            "incidents": list(plan.incidents),
        },
        "config": dict(config_echo or {}),
    }


def plan_from_dict(body: dict) -> SamplePlan:
    """Rebuild a plan from its file form (frame URIs are not stored)."""
    raw_spans = {
        rec["global_index"]: rec.get("raw_span")
        for rec in body.get("provenance", {}).get("frames", [])
    }
    selected = tuple(
        ScoredFrame(
            frame=FrameRef(rec["global_index"], rec["timestamp_s"], uri=""),
            score=rec["score"],
            window_id=rec["window_id"],
            scorer_tag="loaded",
            raw_span=raw_spans.get(rec["global_index"]),
        )
        for rec in body["selected"]
    )
    return SamplePlan(
        video_id=body.get("video_id", ""),
        query=body.get("query", ""),
        selected=selected,
        k=body["k"],
        n_ctx=body["n_ctx"],
        emission_order=body["emission_order"],
        sample_period_s=body.get("sample_period_s", 1.0),
        incidents=tuple(body.get("provenance", {}).get("incidents", [])),
    )


def plan_to_json(plan: SamplePlan, config_echo: dict | None = None) -> str:
    """Byte-stable JSON serialization (sorted keys, fixed separators)."""
    return json.dumps(plan_to_dict(plan, config_echo), sort_keys=True,
                      separators=(",", ":"))


def write_plan(plan: SamplePlan, path: str, config_echo: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(plan_to_dict(plan, config_echo), sort_keys=True, indent=2))
        fh.write("\n")
