"""framepick: query-aware frame sampling for long-video question answering.

The toolkit builds candidate frame pools from manifests, partitions them
into retrieval windows with normalized 1..256 local indices, scores windows
through pluggable generative or similarity backends, merges and ranks the
results into a top-K sample plan, evaluates sampling quality, and forges
densely annotated frame-relevance datasets.
"""

__version__ = "0.1.0"

from .backends import (
    HashEmbeddingBackend,
    OracleGenerativeBackend,
    OracleSimilarityBackend,
    RemoteEmbeddingBackend,
    RemoteGenerativeBackend,
    ScoreRequest,
    UniformBackend,
    cosine_similarity,
    to_wire_request,
)
from .config import RunConfig, load_run_config
from .engine import (
    SampleConfig,
    SamplePlan,
    ScoredFrame,
    ScoredFrameSet,
    hybrid_sample,
    merge_window_results,
    plan_from_dict,
    plan_to_dict,
    plan_to_json,
    sample,
    score_window,
    select_top_k,
    write_plan,
)
from .frames import (
    CandidatePool,
    FrameRef,
    RetrievalWindow,
    build_candidate_pool,
    denormalize,
    load_manifest,
    normalize_window,
    partition_windows,
)
from .metrics import (
    GroundingResult,
    RetrievalEval,
    TimeInterval,
    extract_answer_letter,
    frame_recall,
    grounding_metrics,
    interval_iou,
    plan_to_interval,
    qa_accuracy,
    qa_report,
)
from .prompts import (
    IndexedPrompt,
    TemplateStore,
    augment_query,
    render_window_prompt,
)
from .relevance import (
    ParsedRelevance,
    RelevanceEntry,
    expand_entries,
    parse_relevance_output,
    serialize_entries,
)

__all__ = [
    "CandidatePool",
    "FrameRef",
    "GroundingResult",
    "HashEmbeddingBackend",
    "IndexedPrompt",
    "OracleGenerativeBackend",
    "OracleSimilarityBackend",
    "ParsedRelevance",
    "RelevanceEntry",
    "RemoteEmbeddingBackend",
    "RemoteGenerativeBackend",
    "RetrievalEval",
    "RetrievalWindow",
    "RunConfig",
    "SampleConfig",
    "SamplePlan",
    "ScoreRequest",
    "ScoredFrame",
    "ScoredFrameSet",
    "TemplateStore",
    "TimeInterval",
    "UniformBackend",
    "augment_query",
    "build_candidate_pool",
    "cosine_similarity",
    "denormalize",
    "expand_entries",
    "extract_answer_letter",
    "frame_recall",
    "grounding_metrics",
    "hybrid_sample",
    "interval_iou",
    "load_manifest",
    "load_run_config",
    "merge_window_results",
    "normalize_window",
    "parse_relevance_output",
    "partition_windows",
    "plan_from_dict",
    "plan_to_dict",
    "plan_to_interval",
    "plan_to_json",
    "qa_accuracy",
    "qa_report",
    "render_window_prompt",
    "sample",
    "score_window",
    "select_top_k",
    "serialize_entries",
    "to_wire_request",
    "write_plan",
]
