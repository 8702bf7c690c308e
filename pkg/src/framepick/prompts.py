"""Indexed prompt construction and the task template store.

Every window member is labeled "Frame Number [N]" with N its window-local
index; the downstream scorer sees that label immediately before the frame.
Task prompts are editable text assets keyed by id, with the named
placeholders {frames}, {query}, {options}, {subtitles}.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import OptionOverflow, UnknownTaskPrompt
from .frames import FrameRef, RetrievalWindow

FRAME_LABEL_FORMAT = "Frame Number [{n}]"

_PLACEHOLDERS = ("frames", "query", "options", "subtitles")


def format_mmss(seconds: float) -> str:
    """Render seconds as MM:SS (minutes may exceed 59 for long videos)."""
    total = int(round(seconds))
    return f"{total // 60:02d}:{total % 60:02d}"


@dataclass(frozen=True)
class PromptSegment:
    """One interleaved prompt element: a frame label, the frame it precedes,
    and any subtitle lines attached after it."""

    label_text: str
    frame: FrameRef | None
    subtitle_text: str | None = None


@dataclass(frozen=True)
class IndexedPrompt:
    segments: tuple[PromptSegment, ...]
    query_text: str
    task_prompt_id: str
    task_text: str

    def frames_block(self) -> str:
        lines = []
        for seg in self.segments:
            lines.append(seg.label_text)
            if seg.subtitle_text:
                lines.append(seg.subtitle_text)
        return "\n".join(lines)

    def to_text(self) -> str:
        """Full textual form (stub backends and logs; a multimodal backend
        interleaves the actual images after each label instead)."""
        return render_template_text(
            self.task_text,
            frames=self.frames_block(),
            query=self.query_text,
            options="",
            subtitles="",
        )


class TemplateStore:
    """Read-only store of task prompt templates.

    Defaults to the package assets; pass a directory to use edited copies.
    Missing ids fall back to the packaged defaults so a partial override
    directory only needs the templates it changes.
    """

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory is not None else None
        self._cache: dict[str, str] = {}

    def ids(self) -> list[str]:
        names = set()
        if self._dir is not None and self._dir.is_dir():
            names.update(p.stem for p in self._dir.glob("*.txt"))
        pkg = resources.files("framepick") / "templates"
        names.update(p.name[:-4] for p in pkg.iterdir() if p.name.endswith(".txt"))
        return sorted(names)

    def get(self, template_id: str) -> str:
        if template_id in self._cache:
            return self._cache[template_id]
        text = None
        if self._dir is not None:
            candidate = self._dir / f"{template_id}.txt"
            if candidate.is_file():
                text = candidate.read_text(encoding="utf-8")
        if text is None:
            pkg = resources.files("framepick") / "templates" / f"{template_id}.txt"
            try:
                text = pkg.read_text(encoding="utf-8")
            except (FileNotFoundError, OSError):
                raise UnknownTaskPrompt(f"no template named {template_id!r}") from None
        self._cache[template_id] = text
        return text

    def render(self, template_id: str, **values: str) -> str:
        return render_template_text(self.get(template_id), **values)


def render_template_text(template: str, **values: str) -> str:
    """Substitute named placeholders by targeted replacement.

    Templates may contain literal braces (JSON examples), so str.format is
    unusable; only known {name} markers are replaced.
    """
    out = template
    for name in set(_PLACEHOLDERS) | set(values):
        out = out.replace("{" + name + "}", str(values.get(name, "")))
    return out


_DEFAULT_STORE = TemplateStore()


def augment_query(question: str, options: Sequence[str]) -> str:
    """Append lettered candidate options to a retrieval query."""
    if not question:
        raise ValueError("question must be non-empty")
    if not options:
        return question
    if len(options) > len(string.ascii_uppercase):
        raise OptionOverflow(f"{len(options)} options exceed the A-Z alphabet")
    lines = [question]
    for letter, option in zip(string.ascii_uppercase, options):
        lines.append(f"{letter}. {option}")
    return "\n".join(lines)


def render_window_prompt(
    window: RetrievalWindow,
    query: str,
    options: Sequence[str] | None = None,
    subtitles: Sequence[tuple[float, str]] | None = None,
    task_prompt_id: str = "window_scoring",
    store: TemplateStore | None = None,
) -> IndexedPrompt:
    """Build the interleaved indexed prompt for one retrieval window.

    One "Frame Number [N]" label per member in ascending local order. With
    options, the query becomes the augmented retrieval query. Subtitle lines
    attach after the label of the temporally nearest preceding frame (lines
    earlier than every frame attach to the first one).
    """
    if not query:
        raise ValueError("query must be non-empty")
    store = store or _DEFAULT_STORE
    task_text = store.get(task_prompt_id)

    attached: dict[int, list[str]] = {}
    if subtitles:
        for t, text in sorted(subtitles, key=lambda s: s[0]):
            local = 1
            for i, member in enumerate(window.members, start=1):
                if member.timestamp_s <= t:
                    local = i
                else:
                    break
            attached.setdefault(local, []).append(f"[{format_mmss(t)}] {text}")

    segments = []
    for local, member in enumerate(window.members, start=1):
        subtitle_text = "\n".join(attached[local]) if local in attached else None
        segments.append(
            PromptSegment(
                label_text=FRAME_LABEL_FORMAT.format(n=local),
                frame=member,
                subtitle_text=subtitle_text,
            )
        )

    query_text = augment_query(query, options) if options else query
    return IndexedPrompt(
        segments=tuple(segments),
        query_text=query_text,
        task_prompt_id=task_prompt_id,
        task_text=task_text,
    )
