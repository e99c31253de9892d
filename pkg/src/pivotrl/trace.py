"""Parsing of tagged reasoning traces.

A response is expected to look like::

    <think> reasoning ... <perception>observation</perception> ... </think> \\boxed{B}

:func:`parse_trace` never raises on malformed input. Problems are reported as
violation codes on the returned :class:`ParsedTrace` and ``format_valid`` is
cleared. Offsets are ``str`` indices into the response.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterator

from .errors import PivotError

UNCLOSED_TAG = "UNCLOSED_TAG"
PERCEPTION_OUTSIDE_THINK = "PERCEPTION_OUTSIDE_THINK"
NESTED_PERCEPTION = "NESTED_PERCEPTION"
MISSING_THINK = "MISSING_THINK"
TAG_AFTER_THINK_CLOSE = "TAG_AFTER_THINK_CLOSE"
MULTIPLE_THINK = "MULTIPLE_THINK"


@dataclass(frozen=True)
class TagConfig:
    think_open: str = "<think>"
    think_close: str = "</think>"
    perception_open: str = "<perception>"
    perception_close: str = "</perception>"

    def __post_init__(self) -> None:
        tags = [self.think_open, self.think_close, self.perception_open, self.perception_close]
        if any(not t for t in tags) or len(set(tags)) != 4:
            raise PivotError("CONFIG_INVALID", "tag strings must be non-empty and distinct")


DEFAULT_TAGS = TagConfig()


@dataclass
class RawTrace:
    id: str
    prompt: str
    response: str
    ground_truth: str
    group_id: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise PivotError("RAW_TRACE_INVALID", "id must be non-empty")
        if not self.response:
            raise PivotError("RAW_TRACE_INVALID", f"trace {self.id!r} has an empty response")

    @classmethod
    def from_dict(cls, obj: dict) -> "RawTrace":
        if not isinstance(obj, dict):
            raise PivotError("RAW_TRACE_INVALID", "expected a JSON object")
        missing = [k for k in ("id", "response", "ground_truth") if k not in obj]
        if missing:
            raise PivotError("RAW_TRACE_INVALID", f"missing keys: {', '.join(missing)}")
        return cls(
            id=str(obj["id"]),
            prompt=str(obj.get("prompt", "")),
            response=str(obj["response"]),
            ground_truth=str(obj["ground_truth"]),
            group_id=None if obj.get("group_id") is None else str(obj["group_id"]),
        )

    def to_dict(self) -> dict:
        d = {"id": self.id, "prompt": self.prompt, "response": self.response,
             "ground_truth": self.ground_truth}
        if self.group_id is not None:
            d["group_id"] = self.group_id
        return d


class SegmentKind(str, Enum):
    REASONING = "reasoning"
    PERCEPTION = "perception"


@dataclass(frozen=True)
class Segment:
    """A piece of the think block.

    ``start``/``end`` span the raw text including tag delimiters, so segments
    tile the think span. ``text`` is the content without delimiters.
    """

    kind: SegmentKind
    text: str
    start: int
    end: int
    raw: str


@dataclass(frozen=True)
class Tag:
    name: str  # one of "think_open", "think_close", "perception_open", "perception_close"
    start: int
    end: int


@dataclass
class ParsedTrace:
    source: str
    think_span: tuple[int, int] | None
    segments: list[Segment]
    answer_text: str | None
    format_valid: bool
    format_violations: list[str]
    tags: list[Tag] = field(default_factory=list)
    prefix: str = ""
    suffix: str = ""
    think_closed: bool = False

    @property
    def perceptions(self) -> list[Segment]:
        return [s for s in self.segments if s.kind is SegmentKind.PERCEPTION]

    @property
    def perception_opens(self) -> list[Tag]:
        """Every perception open tag in the response, inside the think block or not."""
        return [t for t in self.tags if t.name == "perception_open"]

    @property
    def think_text(self) -> str:
        if self.think_span is None:
            return ""
        a, b = self.think_span
        return self.source[a:b]


@lru_cache(maxsize=32)
def _tag_regex(tags: TagConfig) -> tuple[re.Pattern[str], dict[str, str]]:
    lookup = {
        tags.think_open: "think_open",
        tags.think_close: "think_close",
        tags.perception_open: "perception_open",
        tags.perception_close: "perception_close",
    }
    # longest first so a tag that prefixes another never shadows it
    alts = sorted(lookup, key=len, reverse=True)
    return re.compile("|".join(re.escape(a) for a in alts)), lookup


def _scan_tags(text: str, tags: TagConfig) -> list[Tag]:
    regex, lookup = _tag_regex(tags)
    return [Tag(lookup[m.group(0)], m.start(), m.end()) for m in regex.finditer(text)]


def _add(violations: list[str], code: str) -> None:
    if code not in violations:
        violations.append(code)


def _check_structure(tag_list: list[Tag]) -> list[str]:
    violations: list[str] = []
    think_seen = False
    in_think = False
    think_closed = False
    perc_depth = 0
    for tag in tag_list:
        if tag.name == "think_open":
            if think_seen:
                _add(violations, MULTIPLE_THINK)
            if perc_depth:
                _add(violations, UNCLOSED_TAG)
                perc_depth = 0
            think_seen = True
            in_think = True
            think_closed = False
        elif tag.name == "think_close":
            if not in_think:
                _add(violations, UNCLOSED_TAG)
            if perc_depth:
                _add(violations, UNCLOSED_TAG)
                perc_depth = 0
            in_think = False
            think_closed = think_seen
        elif tag.name == "perception_open":
            if perc_depth:
                _add(violations, NESTED_PERCEPTION)
            if not in_think:
                _add(violations, TAG_AFTER_THINK_CLOSE if think_closed else PERCEPTION_OUTSIDE_THINK)
            perc_depth += 1
        else:  # perception_close
            if perc_depth == 0:
                _add(violations, UNCLOSED_TAG)
            else:
                perc_depth -= 1
            if think_closed and not in_think:
                _add(violations, TAG_AFTER_THINK_CLOSE)
    if in_think or perc_depth:
        _add(violations, UNCLOSED_TAG)
    if not think_seen:
        _add(violations, MISSING_THINK)
    return violations


def _tile_think(text: str, start: int, end: int, inner: list[Tag]) -> list[Segment]:
    """Split ``text[start:end]`` into alternating reasoning/perception segments.

    Nested opens are absorbed into the enclosing perception and stray closes
    stay in reasoning text, so the tiling holds even for malformed input.
    """
    segments: list[Segment] = []
    pos = start
    open_tag: Tag | None = None
    depth = 0
    for tag in inner:
        if tag.name == "perception_open":
            if depth == 0:
                if tag.start > pos:
                    segments.append(Segment(SegmentKind.REASONING, text[pos:tag.start], pos,
                                            tag.start, text[pos:tag.start]))
                open_tag = tag
                pos = tag.start
            depth += 1
        elif tag.name == "perception_close" and depth:
            depth -= 1
            if depth == 0:
                assert open_tag is not None
                segments.append(Segment(SegmentKind.PERCEPTION, text[open_tag.end:tag.start],
                                        pos, tag.end, text[pos:tag.end]))
                pos = tag.end
    if depth and open_tag is not None:
        segments.append(Segment(SegmentKind.PERCEPTION, text[open_tag.end:end], pos, end,
                                text[pos:end]))
    elif end > pos:
        segments.append(Segment(SegmentKind.REASONING, text[pos:end], pos, end, text[pos:end]))
    return segments


def parse_trace(raw: RawTrace | str, tag_config: TagConfig = DEFAULT_TAGS) -> ParsedTrace:
    """Decompose a response into think span, segments and final answer."""
    text = raw.response if isinstance(raw, RawTrace) else raw
    tag_list = _scan_tags(text, tag_config)
    violations = _check_structure(tag_list)

    think_span = None
    segments: list[Segment] = []
    prefix, suffix = text, ""
    closed = False
    opens = [i for i, t in enumerate(tag_list) if t.name == "think_open"]
    if opens:
        first = tag_list[opens[0]]
        close_idx = next((j for j in range(opens[0] + 1, len(tag_list))
                          if tag_list[j].name == "think_close"), None)
        if close_idx is None:
            think_end, after = len(text), len(text)
        else:
            think_end, after = tag_list[close_idx].start, tag_list[close_idx].end
            closed = True
        inner = [t for t in tag_list if first.end <= t.start and t.end <= think_end]
        think_span = (first.end, think_end)
        segments = _tile_think(text, first.end, think_end, inner)
        prefix, suffix = text[:first.start], text[after:]

    return ParsedTrace(
        source=text,
        think_span=think_span,
        segments=segments,
        answer_text=_extract(text, suffix if closed else None),
        format_valid=not violations,
        format_violations=violations,
        tags=tag_list,
        prefix=prefix,
        suffix=suffix,
        think_closed=closed,
    )


_BOXED = "\\boxed{"


def _boxed_contents(text: str) -> list[str]:
    """Contents of every brace-balanced ``\\boxed{...}`` in order of appearance."""
    found = []
    idx = text.find(_BOXED)
    while idx != -1:
        pos = idx + len(_BOXED)
        depth = 1
        while pos < len(text):
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    break
            pos += 1
        if depth == 0:
            found.append(text[idx + len(_BOXED):pos])
        idx = text.find(_BOXED, idx + 1)
    return found


def _extract(source: str, post_think: str | None) -> str | None:
    if post_think is not None:
        boxed = _boxed_contents(post_think)
        if boxed:
            return boxed[-1]
    boxed = _boxed_contents(source)
    if boxed:
        return boxed[-1]
    if post_think is not None and post_think.strip():
        return post_think.strip()
    return None


def extract_answer(parsed: ParsedTrace) -> str | None:
    """Final answer: last boxed after the think block, else last boxed anywhere,
    else the trimmed text after the think block."""
    return _extract(parsed.source, parsed.suffix if parsed.think_closed else None)


def serialize_trace(parsed: ParsedTrace, tag_config: TagConfig = DEFAULT_TAGS) -> str:
    """Rebuild the response text from the structured parts of a valid trace."""
    if not parsed.format_valid:
        raise PivotError("SERIALIZE_INVALID", "only format-valid traces can be serialized")
    body = []
    for seg in parsed.segments:
        if seg.kind is SegmentKind.PERCEPTION:
            body.append(f"{tag_config.perception_open}{seg.text}{tag_config.perception_close}")
        else:
            body.append(seg.text)
    return f"{parsed.prefix}{tag_config.think_open}{''.join(body)}{tag_config.think_close}{parsed.suffix}"


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict | None, str | None]]:
    """Yield ``(line_number, object, error)`` for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON: {exc.msg}"


def load_corpus(path: str | Path) -> list[RawTrace]:
    """Strict loader: raises on the first malformed line."""
    traces = []
    for lineno, obj, err in iter_jsonl(path):
        if err:
            raise PivotError("CORPUS_MALFORMED", f"line {lineno}: {err}")
        traces.append(RawTrace.from_dict(obj))
    return traces
