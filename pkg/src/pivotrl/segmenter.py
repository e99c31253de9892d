"""Rule-based sentence splitting for reasoning text.

Sentences end at ``. ? ! 。 ？ ！`` or a newline; a run of consecutive
terminators stays attached to the sentence it ends. Abbreviations and decimal
points are not special-cased, so ``e.g.`` or ``2.5`` split like any period.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import PivotError
from .trace import ParsedTrace

TERMINATORS = ".?!。？！\n"

_SENTENCE = re.compile(r"[^" + re.escape(TERMINATORS) + r"]*[" + re.escape(TERMINATORS) + r"]+|[^"
                       + re.escape(TERMINATORS) + r"]+$")


@dataclass(frozen=True)
class SentenceUnit:
    text: str
    start: int
    end: int


def segment_sentences(reasoning_text: str, offset: int = 0) -> list[SentenceUnit]:
    """Split text into whitespace-trimmed sentences.

    ``offset`` is added to every span, so callers can pass a slice of a larger
    document and get offsets into the document.
    """
    units = []
    for m in _SENTENCE.finditer(reasoning_text):
        chunk = m.group(0)
        stripped = chunk.strip()
        if not stripped:
            continue
        lead = len(chunk) - len(chunk.lstrip())
        start = offset + m.start() + lead
        units.append(SentenceUnit(stripped, start, start + len(stripped)))
    return units


def preceding_context(parsed: ParsedTrace, perception_index: int) -> tuple[int, int]:
    """Span of text between the nearest tag before perception ``i`` and its open tag."""
    opens = parsed.perception_opens
    if not 0 <= perception_index < len(opens):
        raise PivotError("INDEX_OUT_OF_RANGE",
                         f"perception index {perception_index} not in [0, {len(opens)})")
    target = opens[perception_index]
    ctx_start = 0
    for tag in parsed.tags:
        if tag.end <= target.start:
            ctx_start = tag.end
        else:
            break
    return ctx_start, target.start


def preceding_sentence(parsed: ParsedTrace, perception_index: int) -> SentenceUnit | None:
    """The last sentence of the reasoning text directly before a perception.

    Only text after the previous tag counts; for a well-formed trace that is
    the reasoning segment between the previous perception (or ``<think>``)
    and this one. Returns None when that text is blank.
    """
    start, end = preceding_context(parsed, perception_index)
    units = segment_sentences(parsed.source[start:end], offset=start)
    return units[-1] if units else None
