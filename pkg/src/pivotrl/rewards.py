"""Composite trajectory reward: accuracy, format, pivotal perception, length.

The pivotal term rewards perceptions whose immediately preceding sentence
contains a lexicon keyword, minus a penalty for coupled perceptions beyond
``alpha_ratio`` of all perceptions, clipped at zero.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from typing import Callable

from .errors import ConfigError
from .lexicon import PivotalLexicon
from .segmenter import preceding_sentence
from .trace import ParsedTrace

TokenCounter = Callable[[str], int]


def whitespace_token_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class RewardConfig:
    lambda_acc: float = 1.0
    lambda_form: float = 0.5
    lambda_pivot: float = 0.5
    lambda_len: float = 0.5
    alpha_ratio: float = 0.5
    lambda_reg: float = 0.1
    l_gold: int = 2048
    delta: float = 1.0
    lambda_len_slope: float = 0.001
    answer_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"reward.{f.name} must be a finite number, got {v!r}")
        for name in ("lambda_acc", "lambda_form", "lambda_pivot", "lambda_len", "lambda_reg",
                     "lambda_len_slope", "answer_tolerance"):
            if getattr(self, name) < 0:
                raise ConfigError(f"reward.{name} must be >= 0")
        if not 0.0 <= self.alpha_ratio <= 1.0:
            raise ConfigError("reward.alpha_ratio must lie in [0, 1]")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("reward.delta must lie in (0, 1]")
        if int(self.l_gold) != self.l_gold or self.l_gold <= 0:
            raise ConfigError("reward.l_gold must be a positive integer")


@dataclass(frozen=True)
class PivotDiagnostics:
    m: int
    m_coupled: int
    m_excess: float
    s_pivot: float


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: float
    r_form: float
    r_pivot: float
    r_len: float
    r_total: float
    m: int
    m_coupled: int
    m_excess: float
    s_pivot: float
    length_tokens: int
    delta_l: int

    def to_dict(self) -> dict:
        return asdict(self)


def pivot_score(m: int, m_coupled: int, alpha_ratio: float, lambda_reg: float) -> PivotDiagnostics:
    s_pivot = m_coupled / m if m > 0 else 0.0
    m_excess = max(0.0, m_coupled - alpha_ratio * m)
    return PivotDiagnostics(m, m_coupled, m_excess, s_pivot)


def pivotal_reward(parsed: ParsedTrace, lex: PivotalLexicon,
                   cfg: RewardConfig) -> tuple[float, PivotDiagnostics]:
    """Return ``(r_pivot, diagnostics)``.

    Every perception open tag counts, including ones outside the think block
    on malformed traces; the format reward carries that penalty separately.
    """
    m = len(parsed.perception_opens)
    m_coupled = 0
    for i in range(m):
        sentence = preceding_sentence(parsed, i)
        if sentence is not None and lex.matcher.find(sentence.text):
            m_coupled += 1
    diag = pivot_score(m, m_coupled, cfg.alpha_ratio, cfg.lambda_reg)
    return max(0.0, diag.s_pivot - cfg.lambda_reg * diag.m_excess), diag


def format_reward(parsed: ParsedTrace) -> float:
    return 1.0 if parsed.format_valid else 0.0


_WS = re.compile(r"\s+")
_FRAC = re.compile(r"^\\[dt]?frac\{([^{}]+)\}\{([^{}]+)\}$")


def _strip_wrappers(s: str) -> str:
    prev = None
    while prev != s:
        prev = s
        s = s.strip()
        if s.startswith("\\boxed{") and s.endswith("}"):
            s = s[len("\\boxed{"):-1]
        elif len(s) >= 2 and s.startswith("$") and s.endswith("$"):
            s = s.strip("$")
    return s


def normalize_answer(s: str) -> str:
    s = _WS.sub(" ", _strip_wrappers(s)).strip()
    if len(s) == 1 and s.isalpha():
        s = s.casefold()
    return s


def parse_number(s: str) -> Fraction | None:
    """Rational value of ``s`` if it reads as an integer, decimal, ``a/b`` or ``\\frac{a}{b}``."""
    s = s.replace(" ", "")
    m = _FRAC.match(s)
    if m:
        num, den = parse_number(m.group(1)), parse_number(m.group(2))
        if num is None or den is None or den == 0:
            return None
        return num / den
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def answers_match(answer: str, ground_truth: str, tolerance: float) -> bool:
    a, b = normalize_answer(answer), normalize_answer(ground_truth)
    if a == b:
        return True
    na, nb = parse_number(a), parse_number(b)
    if na is None or nb is None:
        return False
    return abs(float(na) - float(nb)) <= tolerance * max(1.0, abs(float(nb)))


def accuracy_reward(parsed: ParsedTrace, ground_truth: str, cfg: RewardConfig) -> float:
    if parsed.answer_text is None:
        return 0.0
    return 1.0 if answers_match(parsed.answer_text, ground_truth, cfg.answer_tolerance) else 0.0


def length_reward(parsed: ParsedTrace, r_acc: float, cfg: RewardConfig,
                  count_tokens: TokenCounter = whitespace_token_count) -> float:
    if r_acc == 0:
        return 0.0
    delta_l = count_tokens(parsed.source) - cfg.l_gold
    if delta_l <= 0:
        return 1.0
    return max(0.0, cfg.delta - cfg.lambda_len_slope * delta_l)


def combine(cfg: RewardConfig, r_acc: float, r_form: float, r_pivot: float, r_len: float) -> float:
    return (cfg.lambda_acc * r_acc + cfg.lambda_form * r_form
            + cfg.lambda_pivot * r_pivot + cfg.lambda_len * r_len)


def composite_reward(parsed: ParsedTrace, ground_truth: str, lex: PivotalLexicon,
                     cfg: RewardConfig,
                     count_tokens: TokenCounter = whitespace_token_count) -> RewardBreakdown:
    r_acc = accuracy_reward(parsed, ground_truth, cfg)
    r_form = format_reward(parsed)
    r_pivot, diag = pivotal_reward(parsed, lex, cfg)
    length = count_tokens(parsed.source)
    r_len = length_reward(parsed, r_acc, cfg, lambda _: length)
    return RewardBreakdown(
        r_acc=r_acc,
        r_form=r_form,
        r_pivot=r_pivot,
        r_len=r_len,
        r_total=combine(cfg, r_acc, r_form, r_pivot, r_len),
        m=diag.m,
        m_coupled=diag.m_coupled,
        m_excess=diag.m_excess,
        s_pivot=diag.s_pivot,
        length_tokens=length,
        delta_l=length - cfg.l_gold,
    )
