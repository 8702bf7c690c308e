"""Pluggable scorer backends.

Two scoring families exist: generative backends consume an indexed window
prompt and answer in the relevance-span grammar; similarity backends give
each frame a cosine-style score against the query. Oracle and scripted
variants back the test and comparison harnesses; remote variants speak the
HTTP wire contracts. No model ever runs in-process.
"""

from __future__ import annotations

import hashlib
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Collection, Sequence

import numpy as np
import requests

from .errors import BackendUnavailable, DimensionMismatch, ZeroVector
from .frames import DEFAULT_WINDOW_CAPACITY, FrameRef, RetrievalWindow
from .prompts import IndexedPrompt
from .relevance import RelevanceEntry, serialize_entries

DEFAULT_DECODE = {"temperature": 0.0, "max_tokens": 512}


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two equal-length vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} do not match")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class ScoreRequest:
    """Everything a generative backend needs to score one window."""

    window: RetrievalWindow
    prompt: IndexedPrompt
    query: str
    options: tuple[str, ...] | None = None
    subtitles: tuple[tuple[float, str], ...] | None = None
    task_prompt_id: str = "window_scoring"
    decode: dict = field(default_factory=lambda: dict(DEFAULT_DECODE))
    format_reminder: str | None = None


def to_wire_request(request: ScoreRequest, model_id: str) -> dict:
    """Serialize a ScoreRequest to the remote generative scorer contract."""
    query = request.query
    if request.format_reminder:
        query = f"{query}\n\n{request.format_reminder}"
    wire: dict = {
        "model_id": model_id,
        "query": query,
        "task_prompt_id": request.task_prompt_id,
        "frames": [
            {"local_index": local, "uri": frame.uri}
            for local, frame in sorted(request.window.local_map.items())
        ],
        "decode": dict(request.decode),
    }
    if request.options:
        wire["options"] = list(request.options)
    if request.subtitles:
        wire["subtitles"] = [{"time_s": t, "text": s} for t, s in request.subtitles]
    return wire


class GenerativeBackend(ABC):
    """Backend that answers an indexed window prompt with grammar text."""

    kind = "generative"
    score_kind = "generative"
    tag = "generative"
    max_window_n = DEFAULT_WINDOW_CAPACITY
    supports_batching = False

    @abstractmethod
    def complete(self, request: ScoreRequest) -> str:
        raise NotImplementedError


class SimilarityBackend(ABC):
    """Backend scoring frames against a query in [-1, 1]."""

    kind = "similarity"
    score_kind = "similarity"
    tag = "similarity"
    max_window_n = DEFAULT_WINDOW_CAPACITY
    supports_batching = True

    @abstractmethod
    def score_frames(self, frames: Sequence[FrameRef], query: str) -> list[float]:
        raise NotImplementedError


class UniformBackend:
    """Marker backend: evenly spaced selection to fill the frame budget."""

    kind = "uniform"
    score_kind = "uniform"
    tag = "uniform"
    max_window_n = DEFAULT_WINDOW_CAPACITY
    supports_batching = False


class OracleGenerativeBackend(GenerativeBackend):
    """Deterministic test backend with a planted relevant set.

    Emits canonical grammar text covering the whole window: contiguous runs
    of planted members at ``score``, everything else at 0. Responses go
    through the real parse/expand/denormalize path.
    """

    kind = "oracle"
    tag = "oracle"

    def __init__(self, planted: Collection[int], score: int = 5):
        self.planted = frozenset(int(g) for g in planted)
        self.score = int(score)

    def complete(self, request: ScoreRequest) -> str:
        window = request.window
        entries = []
        run_start = None
        run_planted = None
        for local in range(1, window.n + 1):
            is_planted = window.local_map[local].global_index in self.planted
            if run_planted is None:
                run_start, run_planted = local, is_planted
            elif is_planted != run_planted:
                entries.append(
                    RelevanceEntry(run_start, local - 1, self.score if run_planted else 0)
                )
                run_start, run_planted = local, is_planted
        if run_planted is not None:
            entries.append(
                RelevanceEntry(run_start, window.n, self.score if run_planted else 0)
            )
        return serialize_entries(entries)


class ScriptedGenerativeBackend(GenerativeBackend):
    """Replays queued responses; callables in the queue are invoked with the
    request (raise BackendUnavailable there to script transport failures)."""

    kind = "generative"
    tag = "scripted"

    def __init__(self, responses: Sequence[str | Callable[[ScoreRequest], str]]):
        self._responses = list(responses)
        self.requests: list[ScoreRequest] = []

    def complete(self, request: ScoreRequest) -> str:
        self.requests.append(request)
        if not self._responses:
            raise BackendUnavailable("scripted backend ran out of responses")
        nxt = self._responses.pop(0)
        if callable(nxt):
            return nxt(request)
        return nxt


class RemoteGenerativeBackend(GenerativeBackend):
    """Generative scorer behind an HTTP POST endpoint (JSON bodies)."""

    kind = "generative"

    def __init__(
        self,
        endpoint: str,
        model_id: str = "default",
        timeout_s: float = 60.0,
        token_env: str = "SCORER_TOKEN",
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.timeout_s = timeout_s
        self.token_env = token_env
        self._session = session or requests.Session()
        self.tag = f"remote:{model_id}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: ScoreRequest) -> str:
        body = to_wire_request(request, self.model_id)
        try:
            resp = self._session.post(
                self.endpoint, json=body, headers=self._headers(), timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"scorer endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(
                f"scorer endpoint returned HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            payload = resp.json()
        except ValueError as exc:
            raise BackendUnavailable(f"scorer endpoint sent non-JSON body: {exc}") from exc
        if "text" not in payload:
            raise BackendUnavailable("scorer response is missing the 'text' field")
        return str(payload["text"])


class OracleSimilarityBackend(SimilarityBackend):
    """Planted frames score ``hi``; everything else gets a deterministic
    low value in [-0.25, 0.25] derived from the frame URI."""

    kind = "oracle"
    tag = "oracle-sim"

    def __init__(self, planted: Collection[int], hi: float = 0.95):
        self.planted = frozenset(int(g) for g in planted)
        self.hi = float(hi)

    def score_frames(self, frames: Sequence[FrameRef], query: str) -> list[float]:
        scores = []
        for f in frames:
            if f.global_index in self.planted:
                scores.append(self.hi)
            else:
                digest = hashlib.md5(f"{query}|{f.uri}".encode("utf-8")).digest()
                unit = int.from_bytes(digest[:4], "big") / 0xFFFFFFFF
                scores.append(unit * 0.5 - 0.25)
        return scores


class HashEmbeddingBackend(SimilarityBackend):
    """Offline stand-in for an embedding service: md5-seeded random unit
    vectors per text/URI, cosine against the query embedding."""

    tag = "hash-sim"

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.md5(f"{self.seed}|{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def score_frames(self, frames: Sequence[FrameRef], query: str) -> list[float]:
        q = self.embed(query)
        return [cosine_similarity(q, self.embed(f.uri)) for f in frames]


class RemoteEmbeddingBackend(SimilarityBackend):
    """Embedding service behind an HTTP POST endpoint.

    Request is {"texts": [...]} or {"image_uris": [...]}; response is
    {"vectors": [[...], ...]} with one vector per input.
    """

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 60.0,
        token_env: str = "SCORER_TOKEN",
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.token_env = token_env
        self._session = session or requests.Session()
        self.tag = "remote-embed"

    def _post(self, body: dict) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self._session.post(
                self.endpoint, json=body, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"embedding endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(
                f"embedding endpoint returned HTTP {resp.status_code}"
            )
        try:
            payload = resp.json()
        except ValueError as exc:
            raise BackendUnavailable(f"embedding endpoint sent non-JSON body: {exc}") from exc
        vectors = payload.get("vectors")
        if not isinstance(vectors, list):
            raise BackendUnavailable("embedding response is missing 'vectors'")
        return vectors

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        return self._post({"texts": list(texts)})

    def embed_images(self, uris: Sequence[str]) -> list[list[float]]:
        return self._post({"image_uris": list(uris)})

    def score_frames(self, frames: Sequence[FrameRef], query: str) -> list[float]:
        qvec = np.asarray(self.embed_texts([query])[0], dtype=float)
        fvecs = self.embed_images([f.uri for f in frames])
        if len(fvecs) != len(frames):
            raise BackendUnavailable(
                f"embedding endpoint returned {len(fvecs)} vectors for {len(frames)} frames"
            )
        return [cosine_similarity(qvec, np.asarray(v, dtype=float)) for v in fvecs]
