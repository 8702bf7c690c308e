import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from framepick.backends import (
    DEFAULT_DECODE,
    HashEmbeddingBackend,
    OracleGenerativeBackend,
    OracleSimilarityBackend,
    RemoteEmbeddingBackend,
    RemoteGenerativeBackend,
    ScoreRequest,
    cosine_similarity,
    to_wire_request,
)
from framepick.errors import BackendUnavailable, DimensionMismatch, ZeroVector
from framepick.frames import FrameRef, normalize_window
from framepick.prompts import render_window_prompt
from framepick.relevance import expand_entries, parse_relevance_output


def window_of(n, start_global=0):
    return normalize_window(
        [FrameRef(start_global + i, float(start_global + i), f"u{start_global + i}")
         for i in range(n)]
    )


def request_for(window, query="Q", **kwargs):
    return ScoreRequest(
        window=window,
        prompt=render_window_prompt(window, query),
        query=query,
        **kwargs,
    )


class TestCosineSimilarity:
    def test_identical_vectors(self):
        assert cosine_similarity([2.0, 1.0, -3.0], [2.0, 1.0, -3.0]) == pytest.approx(1.0)

    def test_orthogonal_vectors(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_hand_computed_value(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2))

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            cosine_similarity([0.0, 0.0], [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])


class TestOracleGenerativeBackend:
    def test_covers_whole_window_with_runs(self):
        backend = OracleGenerativeBackend({2, 3, 7})
        window = window_of(8)  # globals 0..7
        text = backend.complete(request_for(window))
        scores = expand_entries(parse_relevance_output(text, "strict").entries, window.n)
        assert scores == {1: 0, 2: 0, 3: 5, 4: 5, 5: 0, 6: 0, 7: 0, 8: 5}

    def test_no_planted_members_means_all_zero(self):
        backend = OracleGenerativeBackend({99})
        window = window_of(4)
        text = backend.complete(request_for(window))
        scores = expand_entries(parse_relevance_output(text, "strict").entries, window.n)
        assert set(scores.values()) == {0}


class TestOracleSimilarityBackend:
    def test_planted_strictly_above_rest(self):
        backend = OracleSimilarityBackend({1, 3})
        frames = [FrameRef(i, float(i), f"u{i}") for i in range(6)]
        sims = backend.score_frames(frames, "q")
        for i, s in enumerate(sims):
            if i in (1, 3):
                assert s == pytest.approx(0.95)
            else:
                assert -0.25 <= s <= 0.25

    def test_deterministic(self):
        backend = OracleSimilarityBackend({0})
        frames = [FrameRef(i, float(i), f"u{i}") for i in range(10)]
        assert backend.score_frames(frames, "q") == backend.score_frames(frames, "q")


class TestHashEmbeddingBackend:
    def test_unit_norm_and_determinism(self):
        backend = HashEmbeddingBackend(dim=32, seed=1)
        v1, v2 = backend.embed("hello"), backend.embed("hello")
        assert v1 == pytest.approx(v2)
        assert sum(x * x for x in v1) == pytest.approx(1.0)

    def test_scores_in_range(self):
        backend = HashEmbeddingBackend(seed=2)
        frames = [FrameRef(i, float(i), f"u{i}") for i in range(20)]
        for s in backend.score_frames(frames, "query"):
            assert -1.0 <= s <= 1.0


class TestWireRequest:
    def test_contract_shape(self):
        window = window_of(3, start_global=40)
        request = request_for(
            window,
            options=("cat", "dog"),
            subtitles=((1.5, "hi"),),
            decode={"temperature": 0.2, "max_tokens": 64},
        )
        wire = to_wire_request(request, model_id="m1")
        assert wire["model_id"] == "m1"
        assert wire["query"] == "Q"
        assert wire["task_prompt_id"] == "window_scoring"
        assert wire["frames"] == [
            {"local_index": 1, "uri": "u40"},
            {"local_index": 2, "uri": "u41"},
            {"local_index": 3, "uri": "u42"},
        ]
        assert wire["options"] == ["cat", "dog"]
        assert wire["subtitles"] == [{"time_s": 1.5, "text": "hi"}]
        assert wire["decode"] == {"temperature": 0.2, "max_tokens": 64}

    def test_optional_fields_absent_when_unset(self):
        wire = to_wire_request(request_for(window_of(1)), model_id="m")
        assert "options" not in wire
        assert "subtitles" not in wire
        assert wire["decode"] == DEFAULT_DECODE

    def test_format_reminder_appends_to_query(self):
        request = request_for(window_of(1), format_reminder="USE JSON")
        wire = to_wire_request(request, model_id="m")
        assert wire["query"].endswith("USE JSON")


class _Handler(BaseHTTPRequestHandler):
    script = []  # list of (status, body_dict_or_text)
    received = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        _Handler.received.append(
            {"path": self.path, "body": body, "auth": self.headers.get("Authorization")}
        )
        status, payload = (_Handler.script.pop(0) if _Handler.script
                           else (200, {"text": "[None]"}))
        raw = (payload if isinstance(payload, str) else json.dumps(payload)).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.script = []
    _Handler.received = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    thread.join(timeout=2)


class TestRemoteGenerativeBackend:
    def test_round_trip_over_http(self, http_server):
        _Handler.script = [(200, {"text": '{"1-2": 4}', "usage": {"tokens": 7}})]
        backend = RemoteGenerativeBackend(http_server, model_id="m9")
        text = backend.complete(request_for(window_of(2, start_global=10)))
        assert text == '{"1-2": 4}'
        sent = _Handler.received[0]["body"]
        assert sent["model_id"] == "m9"
        assert sent["frames"] == [{"local_index": 1, "uri": "u10"},
                                  {"local_index": 2, "uri": "u11"}]
        assert sent["decode"] == DEFAULT_DECODE

    def test_bearer_token_from_environment(self, http_server, monkeypatch):
        monkeypatch.setenv("SCORER_TOKEN", "sekrit")
        _Handler.script = [(200, {"text": "[None]"})]
        RemoteGenerativeBackend(http_server).complete(request_for(window_of(1)))
        assert _Handler.received[0]["auth"] == "Bearer sekrit"

    def test_http_error_raises_backend_unavailable(self, http_server):
        _Handler.script = [(500, {"error": "boom"})]
        with pytest.raises(BackendUnavailable):
            RemoteGenerativeBackend(http_server).complete(request_for(window_of(1)))

    def test_missing_text_field(self, http_server):
        _Handler.script = [(200, {"nope": 1})]
        with pytest.raises(BackendUnavailable):
            RemoteGenerativeBackend(http_server).complete(request_for(window_of(1)))

    def test_unreachable_endpoint(self):
        backend = RemoteGenerativeBackend("http://127.0.0.1:9", timeout_s=0.2)
        with pytest.raises(BackendUnavailable):
            backend.complete(request_for(window_of(1)))


class TestRemoteEmbeddingBackend:
    def test_scores_via_text_and_image_requests(self, http_server):
        _Handler.script = [
            (200, {"vectors": [[1.0, 0.0]]}),            # query embedding
            (200, {"vectors": [[1.0, 0.0], [0.0, 1.0]]}),  # frame embeddings
        ]
        backend = RemoteEmbeddingBackend(http_server)
        frames = [FrameRef(0, 0.0, "a"), FrameRef(1, 1.0, "b")]
        sims = backend.score_frames(frames, "the query")
        assert sims == pytest.approx([1.0, 0.0])
        assert _Handler.received[0]["body"] == {"texts": ["the query"]}
        assert _Handler.received[1]["body"] == {"image_uris": ["a", "b"]}

    def test_vector_count_mismatch(self, http_server):
        _Handler.script = [
            (200, {"vectors": [[1.0, 0.0]]}),
            (200, {"vectors": [[1.0, 0.0]]}),
        ]
        backend = RemoteEmbeddingBackend(http_server)
        frames = [FrameRef(0, 0.0, "a"), FrameRef(1, 1.0, "b")]
        with pytest.raises(BackendUnavailable):
            backend.score_frames(frames, "q")
