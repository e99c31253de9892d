"""Pivot-coupled perception rewards, DAPO utilities and perception-grounded CoT tooling."""

from __future__ import annotations

from .errors import ConfigError, PivotError
from .lexicon import PivotalLexicon, load_default_lexicon, load_lexicon
from .rewards import RewardBreakdown, RewardConfig, composite_reward
from .trace import DEFAULT_TAGS, ParsedTrace, RawTrace, TagConfig, parse_trace, serialize_trace

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DEFAULT_TAGS",
    "ParsedTrace",
    "PivotError",
    "PivotalLexicon",
    "RawTrace",
    "RewardBreakdown",
    "RewardConfig",
    "TagConfig",
    "composite_reward",
    "load_default_lexicon",
    "load_lexicon",
    "parse_trace",
    "serialize_trace",
]
