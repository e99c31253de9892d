"""Perception-grounded CoT construction.

Three teacher calls per record (image description, perception-location
suggestions, perception insertion), followed by structural validation of the
enhanced reasoning against the original.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Iterable, Protocol

import httpx

from .errors import ConfigError, PivotError
from .lexicon import PivotalLexicon, load_default_lexicon
from .segmenter import TERMINATORS, segment_sentences
from .trace import DEFAULT_TAGS, SegmentKind, TagConfig, parse_trace

log = logging.getLogger(__name__)

OK, TRANSIENT, PERMANENT = "ok", "transient_error", "permanent_error"

TAGS_MALFORMED = "TAGS_MALFORMED"
PRESERVATION = "PRESERVATION"
PLACEMENT = "PLACEMENT"
EMPTY_PERCEPTION = "EMPTY_PERCEPTION"
TEACHER_FAILURE = "TEACHER_FAILURE"
MISSING_UPSTREAM_OUTPUT = "MISSING_UPSTREAM_OUTPUT"

# constraints that need the image itself; reported, never checked
UNCHECKED = ("FACTUAL_GROUNDING", "NECESSITY")

PLACEMENT_TERMINATORS = TERMINATORS + ":;"

_Q = "{Insert the original question here}"
_COT = "{Insert the original CoT reasoning here}"
_IMAGE = "{Insert the image here or provide the image file}"
_DESC = "{Insert the pre-generated image description here}"
_SUGG = ("{Insert the list of suggestions, including:\n"
         "  - Locations for inserting new perception segments and what to describe\n"
         "  - Locations of existing visual description sentences/phrases to be wrapped}")

_TEMPLATE_FILES = {
    1: "prompt_step1_description.txt",
    2: "prompt_step2_location.txt",
    3: "prompt_step3_insertion.txt",
}


def load_template(step: int) -> str:
    return resources.files("pivotrl.data").joinpath(_TEMPLATE_FILES[step]).read_text("utf-8")


@dataclass
class PgcotRecord:
    image_ref: str
    question: str
    original_cot: str
    description: str = ""
    suggestions: str = ""
    enhanced_cot: str = ""
    valid: bool = False
    violations: list[str] = field(default_factory=list)
    unchecked: list[str] = field(default_factory=lambda: list(UNCHECKED))
    id: str | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "PgcotRecord":
        return cls(
            image_ref=str(obj.get("image_ref", "")),
            question=str(obj.get("question", "")),
            original_cot=str(obj.get("original_cot", "")),
            description=str(obj.get("description", "")),
            suggestions=str(obj.get("suggestions", "")),
            enhanced_cot=str(obj.get("enhanced_cot", "")),
            id=None if obj.get("id") is None else str(obj["id"]),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["id"] is None:
            del d["id"]
        return d


@dataclass(frozen=True)
class TeacherRequest:
    model_name: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    image_ref: str | None = None
    step: int = 0  # local bookkeeping, not sent

    def __post_init__(self) -> None:
        if not self.messages:
            raise PivotError("REQUEST_INVALID", "messages must be non-empty")
        for role, _ in self.messages:
            if role not in ("system", "user"):
                raise PivotError("REQUEST_INVALID", f"unsupported role {role!r}")

    @property
    def prompt(self) -> str:
        return self.messages[-1][1]


@dataclass(frozen=True)
class TeacherResponse:
    content: str
    status: str = OK


class TeacherClient(Protocol):
    def complete(self, request: TeacherRequest) -> TeacherResponse: ...


def build_request(step: int, record: PgcotRecord, model_name: str = "teacher",
                  temperature: float = 0.0) -> TeacherRequest:
    """Fill one template. Steps 2 and 3 need the question and original CoT;
    step 3 also needs the step-1 description and step-2 suggestions."""
    if step not in _TEMPLATE_FILES:
        raise ValueError(f"step must be 1, 2 or 3, got {step}")
    template = load_template(step)
    if step >= 2:
        if not record.question.strip() or not record.original_cot.strip():
            raise PivotError(MISSING_UPSTREAM_OUTPUT, "question and original_cot are required")
        template = template.replace(_Q, record.question).replace(_COT, record.original_cot)
    if step == 3:
        if not record.description.strip() or not record.suggestions.strip():
            raise PivotError(MISSING_UPSTREAM_OUTPUT, "step 3 needs description and suggestions")
        template = (template.replace(_IMAGE, f"[image: {record.image_ref}]")
                    .replace(_DESC, record.description)
                    .replace(_SUGG, record.suggestions))
    image = record.image_ref if step in (1, 3) and record.image_ref else None
    return TeacherRequest(model_name, (("user", template),), temperature, image, step)


def build_prompts(record: PgcotRecord, model_name: str = "teacher",
                  temperature: float = 0.0) -> list[TeacherRequest]:
    return [build_request(s, record, model_name, temperature) for s in (1, 2, 3)]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _normalize_ws(s: str) -> str:
    return " ".join(s.split())


def _consume(state: tuple[int, bool], piece: str, target: str) -> tuple[int, bool] | None:
    """Advance a whitespace-collapsing match of ``piece`` against ``target``.

    State is ``(chars of target matched, whitespace pending)``.
    """
    pos, pending = state
    for ch in piece:
        if ch.isspace():
            pending = True
            continue
        if pending and pos > 0:
            if pos >= len(target) or target[pos] != " ":
                return None
            pos += 1
        pending = False
        if pos >= len(target) or target[pos] != ch:
            return None
        pos += 1
    return pos, pending


def preserves_original(pieces: list[tuple[bool, str]], original: str) -> bool:
    """True if dropping or unwrapping each perception body reproduces ``original``
    modulo whitespace. ``pieces`` is ``(is_perception, text)`` in order."""
    target = _normalize_ws(original)
    states = {(0, False)}
    for is_perc, text in pieces:
        nxt = set()
        for st in states:
            if is_perc:
                nxt.add(st)  # inserted: delete it
            moved = _consume(st, text, target)
            if moved is not None:
                nxt.add(moved)
        states = nxt
        if not states:
            return False
    return any(pos == len(target) for pos, _ in states)


def _placement_ok(before: str, close_tag: str) -> bool:
    stripped = before.rstrip()
    gap = before[len(stripped):]
    if not stripped or "\n" in gap:
        return True
    if stripped.endswith(close_tag):
        return True
    return stripped[-1] in PLACEMENT_TERMINATORS


def validate_enhanced(original_cot: str, enhanced_cot: str,
                      tags: TagConfig = DEFAULT_TAGS) -> tuple[bool, list[str]]:
    """Structural checks of an enhanced CoT: tags, preservation, placement, non-empty bodies."""
    wrapped = f"{tags.think_open}{enhanced_cot}{tags.think_close}"
    parsed = parse_trace(wrapped, tags)
    if not parsed.format_valid:
        return False, [TAGS_MALFORMED]
    violations = []
    pieces = [(s.kind is SegmentKind.PERCEPTION, s.text) for s in parsed.segments]
    if not preserves_original(pieces, original_cot):
        violations.append(PRESERVATION)
    for seg in parsed.perceptions:
        if not _placement_ok(wrapped[len(tags.think_open):seg.start], tags.perception_close):
            violations.append(PLACEMENT)
            break
    if any(not s.text.strip() for s in parsed.perceptions):
        violations.append(EMPTY_PERCEPTION)
    return not violations, violations


def strip_perceptions(enhanced_cot: str, tags: TagConfig = DEFAULT_TAGS) -> str:
    parsed = parse_trace(f"{tags.think_open}{enhanced_cot}{tags.think_close}", tags)
    return "".join(s.text for s in parsed.segments if s.kind is SegmentKind.REASONING)


def count_perceptions(enhanced_cot: str, tags: TagConfig = DEFAULT_TAGS) -> int:
    return enhanced_cot.count(tags.perception_open)


# ---------------------------------------------------------------------------
# Teacher clients
# ---------------------------------------------------------------------------

class HttpTeacherClient:
    """Chat-completion style client. Reads ``TEACHER_ENDPOINT`` and ``TEACHER_API_KEY``."""

    RETRYABLE = {408, 409, 425, 429, 500, 502, 503, 504}

    def __init__(self, endpoint: str, api_key: str, timeout: float = 120.0,
                 transport: httpx.BaseTransport | None = None) -> None:
        self.endpoint = endpoint
        self._client = httpx.Client(
            timeout=timeout, transport=transport,
            headers={"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"},
        )

    @classmethod
    def from_env(cls, **kwargs) -> "HttpTeacherClient":
        endpoint = os.environ.get("TEACHER_ENDPOINT")
        key = os.environ.get("TEACHER_API_KEY")
        if not key:
            raise ConfigError("TEACHER_API_KEY is not set")
        if not endpoint:
            raise ConfigError("TEACHER_ENDPOINT is not set")
        return cls(endpoint, key, **kwargs)

    @staticmethod
    def payload(request: TeacherRequest) -> dict:
        messages = []
        for i, (role, content) in enumerate(request.messages):
            last = i == len(request.messages) - 1
            if last and role == "user" and request.image_ref:
                messages.append({"role": role, "content": [
                    {"type": "text", "text": content},
                    {"type": "image_url", "image_url": {"url": request.image_ref}},
                ]})
            else:
                messages.append({"role": role, "content": content})
        return {"model": request.model_name, "messages": messages,
                "temperature": request.temperature}

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        try:
            resp = self._client.post(self.endpoint, json=self.payload(request))
        except httpx.TransportError as exc:
            return TeacherResponse(str(exc), TRANSIENT)
        if resp.status_code != 200:
            status = TRANSIENT if resp.status_code in self.RETRYABLE else PERMANENT
            return TeacherResponse(resp.text[:500], status)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            return TeacherResponse("malformed completion body", PERMANENT)
        return TeacherResponse(content if isinstance(content, str) else str(content), OK)

    def close(self) -> None:
        self._client.close()


_COT_START = "Thinking Content (MUST be preserved exactly as shown below):\n"
_COT_END = {2: "\n\nImportant Context:", 3: "\n\nPerception Suggestions:"}


class MockTeacher:
    """Deterministic offline teacher.

    Suggests a perception after every sentence that contains a pivotal
    keyword (or at the start when none does) and inserts one there.
    ``fail_plan`` maps a step to statuses returned before that step succeeds,
    consumed across calls in order.
    """

    def __init__(self, fail_plan: dict[int, list[str]] | None = None,
                 lex: PivotalLexicon | None = None) -> None:
        self.fail_plan = {k: list(v) for k, v in (fail_plan or {}).items()}
        self.lex = lex or load_default_lexicon()
        self.calls: list[TeacherRequest] = []
        self._lock = threading.Lock()

    def _anchors(self, cot: str) -> list[tuple[int, str]]:
        hits = [(u.end, u.text) for u in segment_sentences(cot)
                if u.text[-1] in TERMINATORS and self.lex.matcher.find(u.text)]
        return hits or [(0, "")]

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        with self._lock:
            self.calls.append(request)
            plan = self.fail_plan.get(request.step)
            if plan:
                return TeacherResponse("scripted failure", plan.pop(0))
        if request.step == 1:
            return TeacherResponse(f"The image {request.image_ref} shows a labeled geometric figure.")
        prompt = request.prompt
        start = prompt.find(_COT_START)
        end = prompt.find(_COT_END[request.step], start)
        if start < 0 or end < 0:
            return TeacherResponse("could not locate reasoning in prompt", PERMANENT)
        cot = prompt[start + len(_COT_START):end]
        anchors = self._anchors(cot)
        if request.step == 2:
            lines = []
            for _, text in anchors:
                where = f'After "{text}"' if text else "At the start of the reasoning"
                lines.append(f"- {where}\n  - Describe the figure element this step relies on.")
            return TeacherResponse("\n".join(lines))
        out, prev = [], 0
        for k, (a, _) in enumerate(anchors, start=1):
            out.append(cot[prev:a])
            obs = f"<perception>Observation {k}: the figure shows the element used in this step.</perception>"
            out.append(f" {obs}" if a else f"{obs} ")
            prev = a
        out.append(cot[prev:])
        return TeacherResponse("".join(out))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    model_name: str = "teacher"
    temperature: float = 0.0
    concurrency_limit: int = 4
    max_retries: int = 3
    backoff_base: float = 0.5
    retry_on_invalid: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.concurrency_limit, int) or self.concurrency_limit < 1:
            raise ConfigError("pgcot.concurrency_limit must be an integer >= 1")
        if not isinstance(self.max_retries, int) or self.max_retries < 0:
            raise ConfigError("pgcot.max_retries must be an integer >= 0")
        if self.backoff_base < 0:
            raise ConfigError("pgcot.backoff_base must be >= 0")


class _TeacherFailed(Exception):
    pass


def _call(client: TeacherClient, request: TeacherRequest, max_retries: int,
          backoff_base: float, sleep: Callable[[float], None]) -> str:
    for attempt in range(max_retries + 1):
        try:
            resp = client.complete(request)
        except Exception as exc:  # a misbehaving client counts as transient
            log.warning("teacher call raised: %s", exc)
            resp = TeacherResponse(str(exc), TRANSIENT)
        if resp.status == OK:
            return resp.content
        if resp.status != TRANSIENT or attempt == max_retries:
            raise _TeacherFailed(f"step {request.step}: {resp.status}")
        sleep(backoff_base * 2 ** attempt)
    raise _TeacherFailed(f"step {request.step}: retries exhausted")  # pragma: no cover


def process_record(record: PgcotRecord, client: TeacherClient, cfg: PipelineConfig = PipelineConfig(),
                   sleep: Callable[[float], None] = time.sleep) -> PgcotRecord:
    rec = PgcotRecord(record.image_ref, record.question, record.original_cot, id=record.id)
    try:
        rec.description = _call(client, build_request(1, rec, cfg.model_name, cfg.temperature),
                                cfg.max_retries, cfg.backoff_base, sleep)
        rec.suggestions = _call(client, build_request(2, rec, cfg.model_name, cfg.temperature),
                                cfg.max_retries, cfg.backoff_base, sleep)
        attempts = 1 + (cfg.max_retries if cfg.retry_on_invalid else 0)
        for _ in range(attempts):
            rec.enhanced_cot = _call(client, build_request(3, rec, cfg.model_name, cfg.temperature),
                                     cfg.max_retries, cfg.backoff_base, sleep)
            rec.valid, rec.violations = validate_enhanced(rec.original_cot, rec.enhanced_cot)
            if rec.valid:
                break
    except PivotError as exc:
        rec.valid, rec.violations = False, [exc.code]
    except _TeacherFailed as exc:
        log.info("record %s: teacher failure (%s)", record.id or record.image_ref, exc)
        rec.valid, rec.violations = False, [TEACHER_FAILURE]
    return rec


def run_pipeline(records: Iterable[PgcotRecord], client: TeacherClient,
                 concurrency_limit: int = 4, max_retries: int = 3,
                 cfg: PipelineConfig | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> list[PgcotRecord]:
    """Run all three steps per record with at most ``concurrency_limit`` calls in flight.

    Failures are recorded on the record; output order matches input order.
    """
    cfg = cfg or PipelineConfig(concurrency_limit=concurrency_limit, max_retries=max_retries)
    records = list(records)
    with ThreadPoolExecutor(max_workers=cfg.concurrency_limit) as pool:
        out = list(pool.map(lambda r: process_record(r, client, cfg, sleep), records))
    stats = pipeline_stats(out)
    log.info("pgcot: %d records, valid rate %.3f, mean perceptions %.2f",
             stats["records"], stats["valid_rate"], stats["mean_perceptions"])
    return out


def pipeline_stats(records: list[PgcotRecord]) -> dict:
    n = len(records)
    valid = [r for r in records if r.valid]
    failures: dict[str, int] = {}
    for r in records:
        for v in r.violations:
            failures[v] = failures.get(v, 0) + 1
    return {
        "records": n,
        "valid": len(valid),
        "valid_rate": len(valid) / n if n else 0.0,
        "mean_perceptions": (sum(count_perceptions(r.enhanced_cot) for r in valid) / len(valid))
        if valid else 0.0,
        "violations": failures,
        "unchecked_constraints": list(UNCHECKED),
    }
