"""Synthetic manifests and planted-relevance scenarios.

Used by the comparison harness, the demos, and tests: a scenario plants a
known relevant frame set inside a synthetic video so sampler recall has an
exact ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DataError
from .frames import CandidatePool, build_candidate_pool


def make_manifest_rows(
    video_id: str,
    duration_s: float,
    fps: float = 1.0,
    uri_prefix: str = "synthetic://",
) -> list[dict]:
    """Evenly spaced frame records for a synthetic video."""
    if duration_s <= 0 or fps <= 0:
        raise DataError("duration_s and fps must both be positive")
    n = math.ceil(duration_s * fps)
    period = 1.0 / fps
    return [
        {
            "video_id": video_id,
            "global_index": i,
            "timestamp_s": round(i * period, 3),
            "uri": f"{uri_prefix}{video_id}/{i:06d}.jpg",
        }
        for i in range(n)
    ]


@dataclass
class Scenario:
    """A synthetic retrieval problem with a planted relevant set."""

    video_id: str
    query: str
    duration_s: float
    fps: float = 1.0
    planted: frozenset[int] = frozenset()
    budgets: tuple[int, ...] = (10, 20, 30, 40, 50)
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def pool(self, sample_ratio: float | None = None) -> CandidatePool:
        rows = make_manifest_rows(self.video_id, self.duration_s, self.fps)
        return build_candidate_pool(rows, sample_ratio or self.fps)


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    try:
        return Scenario(
            video_id=str(body["video_id"]),
            query=str(body["query"]),
            duration_s=float(body["duration_s"]),
            fps=float(body.get("fps", 1.0)),
            planted=frozenset(int(g) for g in body["planted"]),
            budgets=tuple(int(b) for b in body.get("budgets", (10, 20, 30, 40, 50))),
            seed=int(body.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"scenario file {path} is malformed: {exc}") from exc


def write_scenario(scenario: Scenario, path: str) -> None:
    body = {
        "video_id": scenario.video_id,
        "query": scenario.query,
        "duration_s": scenario.duration_s,
        "fps": scenario.fps,
        "planted": sorted(scenario.planted),
        "budgets": list(scenario.budgets),
        "seed": scenario.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=2)
        fh.write("\n")
