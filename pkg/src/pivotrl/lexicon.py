"""Pivotal-keyword lexicon and boundary-aware phrase matching."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import PivotError


class Category(str, Enum):
    METACOGNITIVE = "metacognitive"
    STRUCTURAL = "structural"
    VISUAL_REEXAMINATION = "visual_reexamination"


# a letter or digit on either side blocks a match; "_" and punctuation do not
_BEFORE = r"(?<![^\W_])"
_AFTER = r"(?![^\W_])"


def _phrase_regex(phrase: str) -> re.Pattern[str]:
    body = r"\s+".join(re.escape(tok) for tok in phrase.split())
    return re.compile(_BEFORE + body + _AFTER)


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    phrases: tuple[str, ...]


class PhraseMatcher:
    """Case-insensitive matcher for a fixed set of lowercase phrases.

    Single-word phrases match at letter/digit boundaries; multi-word phrases
    match as a token sequence with any whitespace run between tokens.
    """

    def __init__(self, phrases: list[str] | tuple[str, ...]) -> None:
        self.phrases = tuple(phrases)
        # cheap substring pre-check on the first token before running the regex
        self._compiled = [
            (p, p.casefold().split()[0], _phrase_regex(p.casefold())) for p in self.phrases
        ]
        self._cache: dict[str, tuple[str, ...]] = {}

    def find(self, text: str) -> tuple[str, ...]:
        """Distinct phrases occurring in ``text``, in lexicon order."""
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        folded = text.casefold()
        found = tuple(p for p, head, rx in self._compiled if head in folded and rx.search(folded))
        if len(self._cache) < 65536:
            self._cache[text] = found
        return found

    def count(self, text: str) -> dict[str, int]:
        """Occurrences per phrase (non-overlapping, per phrase)."""
        folded = text.casefold()
        counts = {}
        for p, head, rx in self._compiled:
            if head in folded:
                n = sum(1 for _ in rx.finditer(folded))
                if n:
                    counts[p] = n
        return counts

    def __getstate__(self):
        return {"phrases": self.phrases}

    def __setstate__(self, state):
        self.__init__(state["phrases"])


class PivotalLexicon:
    """Immutable list of ``(phrase, category)`` entries plus a matcher."""

    def __init__(self, entries: list[tuple[str, Category]]) -> None:
        seen: set[str] = set()
        for phrase, category in entries:
            if not phrase or not phrase.strip():
                raise PivotError("LEXICON_MALFORMED", "empty phrase")
            if phrase != phrase.lower() or phrase != " ".join(phrase.split()):
                raise PivotError("LEXICON_MALFORMED", f"phrase not normalized: {phrase!r}")
            if phrase in seen:
                raise PivotError("LEXICON_MALFORMED", f"duplicate phrase: {phrase!r}")
            if not isinstance(category, Category):
                raise PivotError("LEXICON_MALFORMED", f"bad category for {phrase!r}")
            seen.add(phrase)
        self.entries: tuple[tuple[str, Category], ...] = tuple(entries)
        self.matcher = PhraseMatcher([p for p, _ in self.entries])

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item) -> bool:
        return item in self.entries

    def category_of(self, phrase: str) -> Category:
        for p, c in self.entries:
            if p == phrase:
                return c
        raise KeyError(phrase)

    def phrases(self, category: Category | None = None) -> list[str]:
        return [p for p, c in self.entries if category is None or c is category]


def parse_lexicon_text(text: str) -> list[tuple[str, str]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise PivotError("LEXICON_MALFORMED", f"line {lineno}: expected <category>TAB<phrase>")
        rows.append((parts[0].strip(), parts[1].strip()))
    return rows


def load_lexicon(path: str | Path | None = None) -> PivotalLexicon:
    """Load a lexicon file; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("pivotrl.data").joinpath("pivotal_keywords.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    entries = []
    for cat, phrase in parse_lexicon_text(text):
        try:
            category = Category(cat.lower())
        except ValueError:
            raise PivotError("LEXICON_MALFORMED", f"unknown category {cat!r}") from None
        entries.append((" ".join(phrase.lower().split()), category))
    return PivotalLexicon(entries)


@lru_cache(maxsize=1)
def load_default_lexicon() -> PivotalLexicon:
    return load_lexicon(None)


def contains_keyword(sentence: str, lex: PivotalLexicon) -> MatchResult:
    phrases = lex.matcher.find(sentence)
    return MatchResult(bool(phrases), phrases)
