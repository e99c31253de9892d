"""Cognitive-behavior detection and per-corpus emergence ratios."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import PivotError
from .lexicon import PhraseMatcher, parse_lexicon_text
from .trace import ParsedTrace

log = logging.getLogger(__name__)

BEHAVIORS = ("verification", "backtracking", "subgoal_setting", "backward_chaining")
DISPLAY_NAMES = {
    "verification": "Verification",
    "backtracking": "Backtracking",
    "subgoal_setting": "SubgoalSetting",
    "backward_chaining": "BackwardChaining",
}
UNCLASSIFIED = "UNCLASSIFIED"
EMPTY_CORPUS = "EMPTY_CORPUS"

# distinct structural phrases needed before a trace counts as setting subgoals
SUBGOAL_MIN_DISTINCT = 2


class BehaviorClassifier(Protocol):
    def classify(self, text: str) -> dict[str, bool]: ...


def load_patterns(path: str | Path | None = None) -> dict[str, list[str]]:
    if path is None:
        text = resources.files("pivotrl.data").joinpath("behavior_patterns.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    patterns: dict[str, list[str]] = {b: [] for b in BEHAVIORS}
    for behavior, phrase in parse_lexicon_text(text):
        if behavior not in patterns:
            raise PivotError("LEXICON_MALFORMED", f"unknown behavior {behavior!r}")
        phrase = " ".join(phrase.lower().split())
        if phrase and phrase not in patterns[behavior]:
            patterns[behavior].append(phrase)
    return patterns


class RuleBasedClassifier:
    """Boundary-matched phrase lists, one per behavior."""

    def __init__(self, patterns: dict[str, list[str]] | None = None) -> None:
        self.patterns = patterns if patterns is not None else load_patterns()
        self._matchers = {b: PhraseMatcher(self.patterns.get(b, [])) for b in BEHAVIORS}

    def matches(self, text: str) -> dict[str, tuple[str, ...]]:
        return {b: m.find(text) for b, m in self._matchers.items()}

    def classify(self, text: str) -> dict[str, bool]:
        hits = self.matches(text)
        flags = {b: bool(hits[b]) for b in BEHAVIORS}
        flags["subgoal_setting"] = len(hits["subgoal_setting"]) >= SUBGOAL_MIN_DISTINCT
        return flags

    def occurrences(self, text: str) -> dict[str, int]:
        return {b: sum(m.count(text).values()) for b, m in self._matchers.items()}


@lru_cache(maxsize=1)
def default_classifier() -> RuleBasedClassifier:
    return RuleBasedClassifier()


_JUDGE_PROMPT = """Classify the reasoning trace below. For each behavior answer true or false.
- verification: the reasoner checks or verifies an intermediate result.
- backtracking: the reasoner abandons an approach or corrects an earlier step.
- subgoal_setting: the reasoner breaks the problem into explicit intermediate steps.
- backward_chaining: the reasoner works backwards from the goal or answer.

Reply with a single JSON object with exactly the keys verification, backtracking, subgoal_setting, backward_chaining.

Reasoning trace:
{trace}"""

_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


class TeacherBehaviorClassifier:
    """Judge-model classifier using any teacher client from :mod:`pivotrl.pgcot`."""

    def __init__(self, client, model_name: str = "judge", temperature: float = 0.0) -> None:
        self.client = client
        self.model_name = model_name
        self.temperature = temperature

    def classify(self, text: str) -> dict[str, bool]:
        from .pgcot import OK, TeacherRequest

        req = TeacherRequest(self.model_name, (("user", _JUDGE_PROMPT.format(trace=text)),),
                             self.temperature)
        resp = self.client.complete(req)
        if resp.status != OK:
            raise RuntimeError(f"judge returned {resp.status}")
        m = _JSON_OBJECT.search(resp.content)
        if m is None:
            raise ValueError("judge reply has no JSON object")
        obj = json.loads(m.group(0))
        if not all(isinstance(obj.get(b), bool) for b in BEHAVIORS):
            raise ValueError("judge reply is missing behavior flags")
        return {b: obj[b] for b in BEHAVIORS}


@dataclass
class TraceBehavior:
    trace_id: str | None
    flags: dict[str, bool] | None
    occurrences: dict[str, int] = field(default_factory=dict)
    error: str | None = None

    @property
    def classified(self) -> bool:
        return self.flags is not None


def reasoning_text(parsed: ParsedTrace) -> str:
    """Think-block text without perception tags; the whole response if there is no think block."""
    if parsed.think_span is None:
        return parsed.source
    return "".join(s.text for s in parsed.segments)


def detect_behaviors(parsed: ParsedTrace, classifier: BehaviorClassifier | None = None,
                     trace_id: str | None = None) -> TraceBehavior:
    classifier = classifier or default_classifier()
    text = reasoning_text(parsed)
    try:
        raw = classifier.classify(text)
        flags = {b: bool(raw[b]) for b in BEHAVIORS}
    except Exception as exc:
        log.warning("trace %s unclassified: %s", trace_id, exc)
        return TraceBehavior(trace_id, None, error=f"{UNCLASSIFIED}: {exc}")
    occ_fn = getattr(classifier, "occurrences", None)
    occurrences = occ_fn(text) if occ_fn else {b: int(flags[b]) for b in BEHAVIORS}
    return TraceBehavior(trace_id, flags, occurrences)


@dataclass
class BehaviorReport:
    classified: int
    unclassified: int
    flagged: dict[str, int]
    occurrences: dict[str, int]
    ratios: dict[str, float]
    unclassified_ids: list[str | None] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{
            "behavior": DISPLAY_NAMES[b],
            "traces_flagged": self.flagged[b],
            "traces_classified": self.classified,
            "ratio": self.ratios[b],
            "occurrences": self.occurrences[b],
            "traces_unclassified": self.unclassified,
        } for b in BEHAVIORS]


CSV_FIELDS = ["behavior", "traces_flagged", "traces_classified", "ratio", "occurrences",
              "traces_unclassified"]


def emergence_ratio(reports: Sequence[TraceBehavior]) -> BehaviorReport:
    """Per-behavior fraction of classified traces exhibiting it."""
    done = [r for r in reports if r.classified]
    if not done:
        raise PivotError(EMPTY_CORPUS, "no classified traces")
    flagged = {b: sum(1 for r in done if r.flags[b]) for b in BEHAVIORS}
    occ = {b: sum(r.occurrences.get(b, 0) for r in done) for b in BEHAVIORS}
    return BehaviorReport(
        classified=len(done),
        unclassified=len(reports) - len(done),
        flagged=flagged,
        occurrences=occ,
        ratios={b: flagged[b] / len(done) for b in BEHAVIORS},
        unclassified_ids=[r.trace_id for r in reports if not r.classified],
    )


def analyze(traces: Iterable[tuple[str | None, ParsedTrace]],
            classifier: BehaviorClassifier | None = None) -> BehaviorReport:
    return emergence_ratio([detect_behaviors(p, classifier, tid) for tid, p in traces])


def write_behavior_csv(report: BehaviorReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in report.rows():
            w.writerow({**row, "ratio": repr(row["ratio"])})
