import random

import pytest

from framepick.frames import CandidatePool, FrameRef, build_candidate_pool
from framepick.synth import make_manifest_rows


def manifest_rows(video_id="vid", duration_s=600.0, fps=1.0):
    return make_manifest_rows(video_id, duration_s, fps)


def make_pool(n_frames, video_id="vid", fps=1.0) -> CandidatePool:
    """A pool of exactly n_frames evenly spaced frames."""
    period = 1.0 / fps
    frames = tuple(
        FrameRef(i, round(i * period, 3), f"synthetic://{video_id}/{i:06d}.jpg")
        for i in range(n_frames)
    )
    return CandidatePool(video_id, frames, fps, n_frames * period)


def random_pool(rng: random.Random, max_frames=2000, video_id="vid") -> CandidatePool:
    return make_pool(rng.randint(1, max_frames), video_id=video_id)


@pytest.fixture
def pool600():
    return make_pool(600)


@pytest.fixture
def rng():
    return random.Random(20240601)
