import json
import random

import pytest

from framepick.errors import (
    InvertedSpan,
    MalformedOutput,
    ParseError,
    ScoreOutOfRange,
    SpanOutOfWindow,
)
from framepick.relevance import (
    RelevanceEntry,
    expand_entries,
    parse_relevance_output,
    serialize_entries,
)

# 25-case golden corpus: 17 valid (discrete keys, span keys, the no-match
# token, whitespace variants) and 8 malformed. Expected entries were written
# by hand from the grammar.
GOLDEN_VALID = [
    ('{"5": 4, "12-18": 5}', [(5, 5, 4), (12, 18, 5)]),
    ("[None]", []),
    ("{}", []),
    ('{"1": 0}', [(1, 1, 0)]),
    ('{"7": 5}', [(7, 7, 5)]),
    ('{"3-3": 2}', [(3, 3, 2)]),
    ('{"12 - 18": 5}', [(12, 18, 5)]),
    ('{ "5" : 4 }', [(5, 5, 4)]),
    ('  {"5": 4}  ', [(5, 5, 4)]),
    ("\n[None]\n", []),
    ('{"1-256": 3}', [(1, 256, 3)]),
    ('{"2": 0, "2": 5}', [(2, 2, 0), (2, 2, 5)]),
    ('{"10-12": 1, "11-13": 4}', [(10, 12, 1), (11, 13, 4)]),
    ('{"007": 3}', [(7, 7, 3)]),
    ('{"5-5": 0}', [(5, 5, 0)]),
    ('{"1": 5, "2": 4, "3": 3, "4": 2, "5": 1, "6": 0}',
     [(1, 1, 5), (2, 2, 4), (3, 3, 3), (4, 4, 2), (5, 5, 1), (6, 6, 0)]),
    ('{"250-256": 5}', [(250, 256, 5)]),
]

GOLDEN_MALFORMED = [
    ("frames three and seven look good", MalformedOutput),
    ('{"5": 9}', ScoreOutOfRange),
    ('{"5": -1}', ScoreOutOfRange),
    ('{"18-12": 5}', InvertedSpan),
    ('{"5": 4.5}', MalformedOutput),
    ('{"a-b": 3}', MalformedOutput),
    ('{"5": "four"}', MalformedOutput),
    ("[1, 2, 3]", MalformedOutput),
]


class TestStrictParsing:
    @pytest.mark.parametrize("text,expected", GOLDEN_VALID)
    def test_golden_valid(self, text, expected):
        parsed = parse_relevance_output(text, mode="strict")
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == expected
        assert parsed.lenient_salvage_count == 0
        assert parsed.raw_text == text

    @pytest.mark.parametrize("text,error", GOLDEN_MALFORMED)
    def test_golden_malformed(self, text, error):
        with pytest.raises(error) as excinfo:
            parse_relevance_output(text, mode="strict")
        assert excinfo.value.raw_text == text

    def test_corpus_size_is_25(self):
        assert len(GOLDEN_VALID) + len(GOLDEN_MALFORMED) == 25

    def test_zero_based_key_rejected(self):
        with pytest.raises(MalformedOutput):
            parse_relevance_output('{"0": 3}', mode="strict")


class TestLenientParsing:
    def test_garbage_yields_empty_with_zero_salvage(self):
        parsed = parse_relevance_output("frames three and seven look good", mode="lenient")
        assert parsed.entries == []
        assert parsed.lenient_salvage_count == 0

    def test_object_recovered_from_surrounding_prose(self):
        text = 'Sure! The relevant frames are: {"5": 4, "12-18": 5}. Hope this helps.'
        parsed = parse_relevance_output(text, mode="lenient")
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == [
            (5, 5, 4), (12, 18, 5),
        ]
        assert parsed.lenient_salvage_count == 0

    def test_markdown_fenced_object(self):
        parsed = parse_relevance_output('```json\n{"9": 2}\n```', mode="lenient")
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == [(9, 9, 2)]

    def test_bad_pairs_discarded_and_counted(self):
        parsed = parse_relevance_output(
            '{"5": 4, "oops": 3, "6": 9, "18-12": 2, "0": 1}', mode="lenient"
        )
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == [(5, 5, 4)]
        assert parsed.lenient_salvage_count == 4

    def test_float_scores_floored_and_counted(self):
        parsed = parse_relevance_output('{"5": 4.7}', mode="lenient")
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == [(5, 5, 4)]
        assert parsed.lenient_salvage_count == 1

    def test_string_scores_coerced_and_counted(self):
        parsed = parse_relevance_output('{"5": "3"}', mode="lenient")
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == [(5, 5, 3)]
        assert parsed.lenient_salvage_count == 1

    def test_trailing_comma_recovers_pairs_via_regex(self):
        parsed = parse_relevance_output('{"5": 4,}', mode="lenient")
        assert [(e.start_local, e.end_local, e.score) for e in parsed.entries] == [(5, 5, 4)]
        assert parsed.lenient_salvage_count == 1

    def test_no_match_token_wins(self):
        parsed = parse_relevance_output("No relevant frames. [None]", mode="lenient")
        assert parsed.entries == []

    def test_lenient_never_raises_and_scores_stay_in_range(self, rng):
        fragments = ['{"', '"}', "5", "-", ":", "4", "9", "[None]", "{", "}", '"12-18"',
                     "null", "true", "x", " ", '\\"', "\n", "4.5", "-3", '"a"']
        for _ in range(2000):
            text = "".join(rng.choice(fragments) for _ in range(rng.randint(0, 24)))
            parsed = parse_relevance_output(text, mode="lenient")
            for e in parsed.entries:
                assert 0 <= e.score <= 5
                assert 1 <= e.start_local <= e.end_local

    def test_fuzz_random_bytes(self, rng):
        for _ in range(2000):
            raw = bytes(rng.randrange(256) for _ in range(rng.randint(0, 64)))
            text = raw.decode("utf-8", errors="replace")
            parsed = parse_relevance_output(text, mode="lenient")
            for e in parsed.entries:
                assert 0 <= e.score <= 5
            try:
                parse_relevance_output(text, mode="strict")
            except ParseError:
                pass


class TestRoundTrip:
    def test_serialize_empty_is_no_match_token(self):
        assert serialize_entries([]) == "[None]"

    def test_print_parse_round_trip(self, rng):
        for _ in range(300):
            entries = []
            for _ in range(rng.randint(0, 8)):
                start = rng.randint(1, 250)
                end = rng.randint(start, min(256, start + rng.randint(0, 30)))
                entries.append(RelevanceEntry(start, end, rng.randint(0, 5)))
            text = serialize_entries(entries)
            reparsed = parse_relevance_output(text, mode="strict")
            assert reparsed.entries == entries
            # and the canonical form is a fixed point
            assert serialize_entries(reparsed.entries) == text


class TestExpandEntries:
    def test_single_span_expands_inclusively(self):
        out = expand_entries([RelevanceEntry(5, 9, 4)], window_n=16)
        assert out == {5: 4, 6: 4, 7: 4, 8: 4, 9: 4}
        assert len(out) == 9 - 5 + 1

    def test_overlap_resolves_to_max(self):
        out = expand_entries(
            [RelevanceEntry(3, 6, 2), RelevanceEntry(5, 8, 5)], window_n=10
        )
        assert out == {3: 2, 4: 2, 5: 5, 6: 5, 7: 5, 8: 5}

    def test_score_zero_recorded(self):
        out = expand_entries([RelevanceEntry(2, 2, 0)], window_n=4)
        assert out == {2: 0}

    def test_matches_brute_force_on_random_entry_sets(self, rng):
        for _ in range(200):
            window_n = rng.randint(1, 64)
            entries = []
            for _ in range(rng.randint(0, 10)):
                start = rng.randint(1, window_n)
                end = rng.randint(start, window_n)
                entries.append(RelevanceEntry(start, end, rng.randint(0, 5)))
            out = expand_entries(entries, window_n)
            oracle = {}
            for local in range(1, window_n + 1):
                covering = [e.score for e in entries if e.start_local <= local <= e.end_local]
                if covering:
                    oracle[local] = max(covering)
            assert out == oracle

    def test_strict_rejects_out_of_window(self):
        with pytest.raises(SpanOutOfWindow):
            expand_entries([RelevanceEntry(3, 9, 4)], window_n=5, mode="strict")

    def test_lenient_clips_to_window(self):
        out = expand_entries(
            [RelevanceEntry(3, 9, 4), RelevanceEntry(20, 30, 5)], window_n=5,
            mode="lenient",
        )
        assert out == {3: 4, 4: 4, 5: 4}
