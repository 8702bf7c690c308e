import re

import pytest

from framepick.errors import OptionOverflow, UnknownTaskPrompt
from framepick.frames import FrameRef, normalize_window
from framepick.prompts import (
    TemplateStore,
    augment_query,
    format_mmss,
    render_template_text,
    render_window_prompt,
)

from conftest import make_pool


def window_of(n):
    return normalize_window([FrameRef(i, float(i * 5), f"u{i}") for i in range(n)])


class TestAugmentQuery:
    def test_no_options_is_identity(self):
        assert augment_query("Q?", []) == "Q?"

    def test_lettered_concatenation(self):
        assert augment_query("Q?", ["x", "y"]) == "Q?\nA. x\nB. y"

    def test_more_than_26_options_overflow(self):
        with pytest.raises(OptionOverflow):
            augment_query("Q?", [str(i) for i in range(27)])

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            augment_query("", ["x"])


class TestRenderWindowPrompt:
    def test_one_label_per_member_in_order(self):
        prompt = render_window_prompt(window_of(3), "Q")
        labels = [seg.label_text for seg in prompt.segments]
        assert labels == ["Frame Number [1]", "Frame Number [2]", "Frame Number [3]"]
        assert [seg.frame.global_index for seg in prompt.segments] == [0, 1, 2]
        assert prompt.query_text == "Q"

    def test_label_uniqueness_across_sizes(self):
        for n in (1, 7, 256):
            prompt = render_window_prompt(window_of(n), "Q")
            text = prompt.frames_block()
            for local in range(1, n + 1):
                assert text.count(f"Frame Number [{local}]") == 1
            assert not re.search(rf"Frame Number \[{n + 1}\]", text)

    def test_options_become_augmented_query(self):
        prompt = render_window_prompt(window_of(2), "Which?", options=["cat", "dog"])
        assert prompt.query_text == "Which?\nA. cat\nB. dog"

    def test_subtitles_attach_to_nearest_preceding_frame(self):
        # frames at t=0,5,10; subtitle at 7s follows the t=5 frame's label
        prompt = render_window_prompt(
            window_of(3), "Q", subtitles=[(7.0, "hello"), (0.5, "early"), (11.0, "late")]
        )
        assert prompt.segments[0].subtitle_text == "[00:00] early"
        assert prompt.segments[1].subtitle_text == "[00:07] hello"
        assert prompt.segments[2].subtitle_text == "[00:11] late"
        block = prompt.frames_block()
        assert block.index("Frame Number [2]") < block.index("[00:07] hello")
        assert block.index("[00:07] hello") < block.index("Frame Number [3]")

    def test_subtitle_before_first_frame_attaches_to_first(self):
        members = [FrameRef(0, 10.0, "a"), FrameRef(1, 20.0, "b")]
        prompt = render_window_prompt(
            normalize_window(members), "Q", subtitles=[(2.0, "intro")]
        )
        assert prompt.segments[0].subtitle_text == "[00:02] intro"

    def test_unknown_template_id(self):
        with pytest.raises(UnknownTaskPrompt):
            render_window_prompt(window_of(1), "Q", task_prompt_id="nope")

    def test_full_text_contains_task_query_and_labels(self):
        prompt = render_window_prompt(window_of(2), "What happened?")
        text = prompt.to_text()
        assert "What happened?" in text
        assert "Frame Number [1]" in text
        assert "[None]" in text  # the no-match instruction survives rendering


class TestTemplateStore:
    def test_packaged_ids_present(self):
        store = TemplateStore()
        ids = store.ids()
        for required in ("window_scoring", "retrieval_timestamps", "caption_differential",
                         "qa_generation", "relevance_scoring", "format_reminder"):
            assert required in ids

    def test_directory_overrides_packaged_template(self, tmp_path):
        (tmp_path / "window_scoring.txt").write_text("CUSTOM {query}", encoding="utf-8")
        store = TemplateStore(tmp_path)
        assert store.render("window_scoring", query="Q") == "CUSTOM Q"
        # ids not present in the directory still resolve to packaged assets
        assert "[None]" in store.get("format_reminder")

    def test_literal_braces_survive_rendering(self):
        out = render_template_text('{"4": 3} {query}', query="Q")
        assert out == '{"4": 3} Q'

    def test_stage_templates_carry_expected_anchors(self):
        store = TemplateStore()
        assert "rationale_timestamps" in store.get("qa_generation")
        assert "Highly Relevant" in store.get("relevance_scoring")
        assert "low quality" in store.get("relevance_scoring")
        assert "[XX:XX]" in store.get("retrieval_timestamps")


class TestFormatMmss:
    def test_basic(self):
        assert format_mmss(0) == "00:00"
        assert format_mmss(270) == "04:30"
        assert format_mmss(665.4) == "11:05"

    def test_minutes_can_exceed_59(self):
        assert format_mmss(3725) == "62:05"
