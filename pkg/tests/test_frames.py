import io
import math
import random

import pytest

from framepick.errors import (
    DuplicateGlobalIndex,
    EmptyManifest,
    EmptyPool,
    LocalIndexOutOfRange,
    NonMonotonicTimestamps,
    RateExceedsSource,
    WindowOverflow,
)
from framepick.frames import (
    FrameRef,
    build_candidate_pool,
    denormalize,
    load_manifest,
    normalize_window,
    partition_windows,
)

from conftest import make_pool, manifest_rows


def subsample_oracle(timestamps, ratio):
    """Brute-force reference: keep row i iff floor(t_i * ratio) advances."""
    kept, last = [], None
    for i, t in enumerate(timestamps):
        bucket = math.floor(t * ratio)
        if last is None or bucket > last:
            kept.append(i)
            last = bucket
    return kept


class TestBuildCandidatePool:
    def test_identity_subsampling_at_source_rate(self):
        rows = manifest_rows(duration_s=600, fps=1.0)
        pool = build_candidate_pool(rows, 1.0)
        assert len(pool) == 600
        assert [f.timestamp_s for f in pool.frames] == [r["timestamp_s"] for r in rows]

    def test_one_fifth_rate_keeps_120_frames_five_seconds_apart(self):
        rows = manifest_rows(duration_s=600, fps=1.0)
        oracle = subsample_oracle([r["timestamp_s"] for r in rows], 0.2)
        pool = build_candidate_pool(rows, 0.2)
        assert len(pool) == len(oracle) == 120
        gaps = {
            round(b.timestamp_s - a.timestamp_s, 6)
            for a, b in zip(pool.frames, pool.frames[1:])
        }
        assert gaps == {5.0}

    def test_captioning_rate_is_plain_subsampling(self):
        # the dataset pipeline's dense 0.2 fps pool is the same operation
        rows = manifest_rows(duration_s=647.5, fps=1.0)
        pool = build_candidate_pool(rows, 0.2)
        assert 129 <= len(pool) <= 130

    def test_dense_reindexing_preserves_source_index(self):
        rows = manifest_rows(duration_s=100, fps=1.0)
        pool = build_candidate_pool(rows, 0.5)
        assert [f.global_index for f in pool.frames] == list(range(len(pool)))
        for f in pool.frames:
            assert rows[f.source_index]["timestamp_s"] == f.timestamp_s

    def test_empty_manifest(self):
        with pytest.raises(EmptyManifest):
            build_candidate_pool([], 1.0)

    def test_non_monotonic_timestamps(self):
        rows = manifest_rows(duration_s=10)
        rows[3]["timestamp_s"] = 99.0
        with pytest.raises(NonMonotonicTimestamps):
            build_candidate_pool(rows, 1.0)

    def test_rate_exceeding_source_rate(self):
        rows = manifest_rows(duration_s=60, fps=1.0)
        with pytest.raises(RateExceedsSource):
            build_candidate_pool(rows, 2.0)

    def test_subsample_count_matches_oracle_on_random_inputs(self, rng):
        for _ in range(300):
            duration = rng.uniform(5, 2000)
            fps = rng.choice([0.5, 1.0, 2.0])
            ratio = rng.uniform(0.05, fps)
            rows = manifest_rows(duration_s=duration, fps=fps)
            pool = build_candidate_pool(rows, ratio)
            oracle = subsample_oracle([r["timestamp_s"] for r in rows], ratio)
            assert len(pool) == len(oracle)

    def test_irregular_manifest_buckets_sanely(self):
        rows = [
            {"video_id": "v", "global_index": i, "timestamp_s": t, "uri": f"u{i}"}
            for i, t in enumerate([0.0, 0.2, 3.9, 4.1, 9.5, 9.9, 20.0])
        ]
        pool = build_candidate_pool(rows, 0.25)
        oracle = subsample_oracle([r["timestamp_s"] for r in rows], 0.25)
        assert [f.source_index for f in pool.frames] == oracle == [0, 3, 4, 6]


class TestPartitionWindows:
    def test_single_window_when_pool_fits(self):
        windows = partition_windows(make_pool(256), 256)
        assert len(windows) == 1
        assert windows[0].n == 256

    def test_600_frames_split_into_256_256_88(self, pool600):
        # slicing oracle: ceil(600/256) == 3 windows
        assert math.ceil(600 / 256) == 3
        windows = partition_windows(pool600, 256, 256)
        assert [w.n for w in windows] == [256, 256, 88]
        assert [w.window_id for w in windows] == [0, 1, 2]

    def test_default_stride_covers_disjointly(self, rng):
        for _ in range(50):
            pool = make_pool(rng.randint(1, 1500))
            windows = partition_windows(pool, 256)
            seen = [m.global_index for w in windows for m in w.members]
            assert sorted(seen) == list(range(len(pool)))
            assert len(seen) == len(set(seen))

    def test_overlapping_stride_covers_every_frame(self, rng):
        for _ in range(30):
            pool = make_pool(rng.randint(1, 800))
            capacity = rng.randint(1, 256)
            stride = rng.randint(1, capacity)
            windows = partition_windows(pool, capacity, stride)
            covered = {m.global_index for w in windows for m in w.members}
            assert covered == set(range(len(pool)))
            assert [w.window_id for w in windows] == list(range(len(windows)))

    def test_empty_pool_rejected(self):
        pool = make_pool(1)
        object.__setattr__(pool, "frames", ())
        with pytest.raises(EmptyPool):
            partition_windows(pool, 256)

    def test_capacity_and_stride_validation(self, pool600):
        with pytest.raises(Exception):
            partition_windows(pool600, 0)
        with pytest.raises(Exception):
            partition_windows(pool600, 300)
        with pytest.raises(Exception):
            partition_windows(pool600, 256, 257)


class TestNormalizeDenormalize:
    def test_order_preserving_relabel(self):
        members = [FrameRef(g, float(g), f"u{g}") for g in (17, 42, 99)]
        window = normalize_window(members)
        assert {loc: f.global_index for loc, f in window.local_map.items()} == {
            1: 17, 2: 42, 3: 99,
        }

    def test_scattered_ids_map_onto_dense_locals(self):
        # survivors of a prefilter: 256 globals from 1000..1255 with gaps
        globals_ = sorted(random.Random(5).sample(range(1000, 1512), 256))
        members = [FrameRef(g, float(g), f"u{g}") for g in globals_]
        window = normalize_window(members)
        assert set(window.local_map) == set(range(1, 257))
        assert [window.local_map[i].global_index for i in range(1, 257)] == globals_

    def test_round_trip_identity(self, rng):
        for _ in range(50):
            pool = make_pool(rng.randint(1, 600))
            for window in partition_windows(pool, 256):
                for local, frame in window.local_map.items():
                    assert denormalize(window, local) is frame
                    assert window.local_index_of(frame) == local

    def test_local_zero_is_out_of_range(self):
        window = normalize_window([FrameRef(0, 0.0, "u")])
        with pytest.raises(LocalIndexOutOfRange):
            denormalize(window, 0)
        with pytest.raises(LocalIndexOutOfRange):
            denormalize(window, 2)

    def test_overflow_and_duplicates_rejected(self):
        members = [FrameRef(g, float(g), f"u{g}") for g in range(300)]
        with pytest.raises(WindowOverflow):
            normalize_window(members)
        dup = [FrameRef(1, 0.0, "a"), FrameRef(1, 1.0, "b")]
        with pytest.raises(DuplicateGlobalIndex):
            normalize_window(dup)

    def test_monotone_relabeling(self, rng):
        for _ in range(20):
            pool = make_pool(rng.randint(2, 512))
            for window in partition_windows(pool, 256):
                stamps = [window.local_map[i].timestamp_s for i in range(1, window.n + 1)]
                assert stamps == sorted(stamps)


class TestManifestIO:
    def test_load_from_stream(self):
        text = (
            '{"video_id": "v", "global_index": 0, "timestamp_s": 0.0, "uri": "a"}\n'
            "\n"
            '{"video_id": "v", "global_index": 1, "timestamp_s": 1.0, "uri": "b"}\n'
        )
        rows = load_manifest(io.StringIO(text))
        assert [r["uri"] for r in rows] == ["a", "b"]

    def test_missing_fields_rejected(self):
        with pytest.raises(Exception, match="missing fields"):
            load_manifest(io.StringIO('{"video_id": "v", "global_index": 0}\n'))

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"video_id": "v", "global_index": 0, "timestamp_s": 0.0, "uri": "a"}\n'
        )
        assert len(load_manifest(str(path))) == 1
