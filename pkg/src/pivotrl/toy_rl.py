"""Desk-scale testbed for perception timing.

An episode has ``num_slots`` slots. In each slot the policy picks a sentence
type (keyword or plain), a pool sentence of that type is emitted, and the
policy decides whether to emit a perception right after it. Finally it picks
an answer symbol. Ground truth is the first answer symbol when at least one
perception was emitted and an unattainable ``"Z"`` otherwise, so correctness
requires grounding. Each decision is one "token" for the surrogate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .dapo import DapoConfig, RolloutGroup, Trajectory, dynamic_filter, group_advantages, \
    surrogate_gradient
from .errors import ConfigError, PivotError
from .lexicon import PivotalLexicon, load_default_lexicon
from .rewards import RewardConfig, composite_reward
from .segmenter import segment_sentences
from .trace import DEFAULT_TAGS, RawTrace, TagConfig, parse_trace

UNATTAINABLE = "Z"

DEFAULT_KEYWORD_POOL = (
    "Wait, let me check the figure again.",
    "Let me double-check the labeled lengths.",
    "First, I need to look at the diagram.",
    "However, the angle might be different.",
    "I'm not sure about the side lengths.",
    "Next, consider the marked angle.",
)
DEFAULT_PLAIN_POOL = (
    "The triangle has two equal sides.",
    "So the base angles are equal.",
    "The sum of the angles is 180 degrees.",
    "This gives a value of twelve.",
    "Both segments are radii of the circle.",
    "So the answer is one of the choices.",
)
DEFAULT_PERCEPTION = "The figure shows a circle with center C and three marked segments."


@dataclass(frozen=True)
class ToyEnvConfig:
    num_slots: int = 6
    keyword_sentence_pool: tuple[str, ...] = DEFAULT_KEYWORD_POOL
    plain_sentence_pool: tuple[str, ...] = DEFAULT_PLAIN_POOL
    perception_text: str = DEFAULT_PERCEPTION
    answer_alphabet: tuple[str, str] = ("A", "B")
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "keyword_sentence_pool", tuple(self.keyword_sentence_pool))
        object.__setattr__(self, "plain_sentence_pool", tuple(self.plain_sentence_pool))
        object.__setattr__(self, "answer_alphabet", tuple(self.answer_alphabet))
        if not isinstance(self.num_slots, int) or self.num_slots < 1:
            raise ConfigError("env.num_slots must be an integer >= 1")
        if not self.keyword_sentence_pool or not self.plain_sentence_pool:
            raise ConfigError("env sentence pools must be non-empty")
        if len(self.answer_alphabet) != 2 or len(set(self.answer_alphabet)) != 2 \
                or UNATTAINABLE in self.answer_alphabet:
            raise ConfigError("env.answer_alphabet must be two distinct symbols other than 'Z'")
        if not self.perception_text.strip():
            raise ConfigError("env.perception_text must be non-empty")


def check_pools(env: ToyEnvConfig, lex: PivotalLexicon) -> None:
    """Every keyword-pool sentence must match the lexicon and no plain one may.

    Each pool entry must also be exactly one sentence, so it is the sentence
    immediately preceding a perception emitted after it.
    """
    for pool, want in ((env.keyword_sentence_pool, True), (env.plain_sentence_pool, False)):
        for s in pool:
            if len(segment_sentences(s)) != 1:
                raise ConfigError(f"pool entry is not a single sentence: {s!r}")
            if bool(lex.matcher.find(s)) is not want:
                kind = "keyword" if want else "plain"
                raise ConfigError(f"{kind} pool sentence fails the lexicon check: {s!r}")


class PolicyParams:
    """Eight logits: slot type, perceive given keyword, perceive given plain, answer."""

    __slots__ = ("theta",)

    def __init__(self, theta: Sequence[float] | np.ndarray | None = None) -> None:
        arr = np.zeros(_kernels.N_PARAMS) if theta is None else np.array(theta, dtype=np.float64)
        if arr.shape != (_kernels.N_PARAMS,) or not np.all(np.isfinite(arr)):
            raise PivotError("PARAMS_INVALID", f"expected 8 finite values, got {arr!r}")
        self.theta = arr

    @property
    def slot_type_logits(self) -> np.ndarray:
        return self.theta[0:2]

    @property
    def perceive_logits_given_keyword(self) -> np.ndarray:
        return self.theta[2:4]

    @property
    def perceive_logits_given_plain(self) -> np.ndarray:
        return self.theta[4:6]

    @property
    def answer_logits(self) -> np.ndarray:
        return self.theta[6:8]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.theta.copy())

    def prob(self, block: int, choice: int) -> float:
        l0, l1 = self.theta[2 * block], self.theta[2 * block + 1]
        lc, lo = (l0, l1) if choice == 0 else (l1, l0)
        return 1.0 / (1.0 + math.exp(lo - lc))

    def __eq__(self, other) -> bool:
        return isinstance(other, PolicyParams) and np.array_equal(self.theta, other.theta)

    def __repr__(self) -> str:
        return f"PolicyParams({self.theta.tolist()})"


@dataclass
class DecisionRecord:
    blocks: np.ndarray
    choices: np.ndarray
    sentence_indices: list[int] = field(default_factory=list)

    @property
    def num_perceptions(self) -> int:
        perceive = (self.blocks == _kernels.PERC_KW_BLOCK) | (self.blocks == _kernels.PERC_PLAIN_BLOCK)
        return int(np.sum(self.choices[perceive] == 1))


def render(record: DecisionRecord, env: ToyEnvConfig, tags: TagConfig = DEFAULT_TAGS) -> RawTrace:
    """Text of the episode described by ``record``."""
    pieces = []
    m = 0
    for slot in range(env.num_slots):
        is_keyword = record.choices[2 * slot] == 0
        pool = env.keyword_sentence_pool if is_keyword else env.plain_sentence_pool
        idx = record.sentence_indices[slot] if record.sentence_indices else 0
        pieces.append(pool[idx % len(pool)])
        if record.choices[2 * slot + 1] == 1:
            pieces.append(f"{tags.perception_open}{env.perception_text}{tags.perception_close}")
            m += 1
    answer = env.answer_alphabet[int(record.choices[-1])]
    response = f"{tags.think_open}{' '.join(pieces)}{tags.think_close} \\boxed{{{answer}}}"
    truth = env.answer_alphabet[0] if m >= 1 else UNATTAINABLE
    return RawTrace(id="toy", prompt="toy query", response=response, ground_truth=truth)


def rollout(params: PolicyParams, env: ToyEnvConfig, rng: np.random.Generator,
            tags: TagConfig = DEFAULT_TAGS) -> tuple[RawTrace, np.ndarray, DecisionRecord]:
    """Sample one episode. Consumes exactly ``2*T+1`` plus ``T`` uniforms from ``rng``."""
    t = env.num_slots
    uniforms = rng.random(2 * t + 1)
    picks = rng.random(t)
    blocks, choices, logprobs = _kernels.sample_episode(params.theta, uniforms, t)
    record = DecisionRecord(blocks, choices, [0] * t)
    for slot in range(t):
        pool = env.keyword_sentence_pool if choices[2 * slot] == 0 else env.plain_sentence_pool
        record.sentence_indices[slot] = int(picks[slot] * len(pool))
    return render(record, env, tags), logprobs, record


def logprob_gradients(params: PolicyParams, record: DecisionRecord) -> np.ndarray:
    """``(n_decisions, 8)`` matrix of d(log p(decision))/d(theta)."""
    return _kernels.decision_jacobian(params.theta, record.blocks, record.choices)


def expert_demonstrations(env: ToyEnvConfig, n: int, rng: np.random.Generator) -> list[DecisionRecord]:
    """Scripted expert: random sentence types, perceive exactly after keyword sentences, answer first symbol."""
    demos = []
    t = env.num_slots
    for _ in range(n):
        types = (rng.random(t) >= 0.5).astype(np.int64)  # 0 keyword, 1 plain
        blocks = np.empty(2 * t + 1, dtype=np.int64)
        choices = np.empty(2 * t + 1, dtype=np.int64)
        blocks[0:2 * t:2] = _kernels.SLOT_BLOCK
        choices[0:2 * t:2] = types
        blocks[1:2 * t:2] = np.where(types == 0, _kernels.PERC_KW_BLOCK, _kernels.PERC_PLAIN_BLOCK)
        choices[1:2 * t:2] = np.where(types == 0, 1, 0)
        blocks[-1] = _kernels.ANSWER_BLOCK
        choices[-1] = 0
        demos.append(DecisionRecord(blocks, choices, [0] * t))
    return demos


def demo_nll(params: PolicyParams, demos: Sequence[DecisionRecord]) -> float:
    """Mean over demonstrations of the summed per-decision negative log-likelihood."""
    total = 0.0
    for d in demos:
        total -= float(np.sum(_kernels.decision_logprobs(params.theta, d.blocks, d.choices)))
    return total / len(demos)


def sft_warmup(params: PolicyParams, demonstrations: Sequence[DecisionRecord], steps: int,
               lr: float, return_curve: bool = False):
    """Gradient descent on :func:`demo_nll`.

    Returns the updated params, or ``(params, curve)`` with the NLL before
    each step and after the last when ``return_curve`` is set.
    """
    if not demonstrations:
        raise PivotError("EMPTY_DEMOS", "sft_warmup needs at least one demonstration")
    theta = params.theta.copy()
    curve = []
    for _ in range(steps):
        current = PolicyParams(theta)
        if return_curve:
            curve.append(demo_nll(current, demonstrations))
        grad = np.zeros_like(theta)
        for d in demonstrations:
            grad += np.sum(_kernels.decision_jacobian(theta, d.blocks, d.choices), axis=0)
        theta = theta + lr * grad / len(demonstrations)
    out = PolicyParams(theta)
    if return_curve:
        curve.append(demo_nll(out, demonstrations))
        return out, curve
    return out


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    mean_reward: float
    accuracy: float
    s_pivot: float
    coupled_fraction: float
    mean_m: float
    grounded_rate: float
    updated: int


METRIC_FIELDS = [f.name for f in fields(IterationMetrics)]


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    group_size: int = 8
    lr: float = 0.05
    inner_steps: int = 1
    sft_warmup_steps: int = 0
    sft_lr: float = 0.1
    sft_demos: int = 64

    def __post_init__(self) -> None:
        for name in ("iterations", "sft_warmup_steps", "sft_demos"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"train.{name} must be a non-negative integer")
        if not isinstance(self.group_size, int) or self.group_size < 2:
            raise ConfigError("train.group_size must be an integer >= 2")
        if not isinstance(self.inner_steps, int) or self.inner_steps < 1:
            raise ConfigError("train.inner_steps must be an integer >= 1")
        for name in ("lr", "sft_lr"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ConfigError(f"train.{name} must be a positive number")


def train(params: PolicyParams, env: ToyEnvConfig, reward_cfg: RewardConfig,
          dapo_cfg: DapoConfig, iterations: int, group_size: int, lr: float,
          rng: np.random.Generator, lex: PivotalLexicon | None = None,
          inner_steps: int = 1, tags: TagConfig = DEFAULT_TAGS,
          ) -> tuple[PolicyParams, list[IterationMetrics]]:
    """Plain gradient ascent on the clipped surrogate, one group per iteration.

    Iterations whose group is all-correct or all-incorrect are recorded but
    make no update.
    """
    if group_size < 2:
        raise PivotError("GROUP_TOO_SMALL", f"group_size={group_size}")
    lex = lex or load_default_lexicon()
    check_pools(env, lex)
    theta = params.theta.copy()
    metrics: list[IterationMetrics] = []
    for it in range(iterations):
        old = PolicyParams(theta.copy())
        samples = [rollout(old, env, rng, tags) for _ in range(group_size)]
        breakdowns = [composite_reward(parse_trace(raw, tags), raw.ground_truth, lex, reward_cfg)
                      for raw, _, _ in samples]

        total_m = sum(b.m for b in breakdowns)
        trajectories = [Trajectory(lp, lp.copy(), b.r_total, b.r_acc == 1.0)
                        for (_, lp, _), b in zip(samples, breakdowns)]
        group = RolloutGroup(f"iter-{it}", trajectories)
        kept = bool(dynamic_filter([group]))
        if kept:
            adv = group_advantages(group.rewards, dapo_cfg)
            records = [rec for _, _, rec in samples]
            for _ in range(inner_steps):
                for tr, rec in zip(group.trajectories, records):
                    tr.new_logprobs = _kernels.decision_logprobs(theta, rec.blocks, rec.choices)
                current = theta
                grad = surrogate_gradient(
                    group, adv, dapo_cfg,
                    lambda i: _kernels.decision_jacobian(current, records[i].blocks, records[i].choices),
                    n_params=_kernels.N_PARAMS,
                )
                theta = theta + lr * grad
        g = float(group_size)
        metrics.append(IterationMetrics(
            iteration=it,
            mean_reward=sum(b.r_total for b in breakdowns) / g,
            accuracy=sum(b.r_acc for b in breakdowns) / g,
            s_pivot=sum(b.s_pivot for b in breakdowns) / g,
            coupled_fraction=(sum(b.m_coupled for b in breakdowns) / total_m) if total_m else 0.0,
            mean_m=total_m / g,
            grounded_rate=sum(1 for b in breakdowns if b.m >= 1) / g,
            updated=int(kept),
        ))
    return PolicyParams(theta), metrics


def run_training(env: ToyEnvConfig, reward_cfg: RewardConfig, dapo_cfg: DapoConfig,
                 train_cfg: TrainConfig, seed: int | None = None,
                 lex: PivotalLexicon | None = None, tags: TagConfig = DEFAULT_TAGS,
                 ) -> tuple[PolicyParams, list[IterationMetrics]]:
    """Seeded entry point: optional SFT warm-up from expert demos, then RL."""
    rng = np.random.default_rng(env.seed if seed is None else seed)
    params = PolicyParams()
    if train_cfg.sft_warmup_steps:
        demos = expert_demonstrations(env, train_cfg.sft_demos, rng)
        params = sft_warmup(params, demos, train_cfg.sft_warmup_steps, train_cfg.sft_lr)
    return train(params, env, reward_cfg, dapo_cfg, train_cfg.iterations, train_cfg.group_size,
                 train_cfg.lr, rng, lex=lex, inner_steps=train_cfg.inner_steps, tags=tags)


def tail_mean(metrics: Sequence[IterationMetrics], name: str, window: int = 100) -> float:
    tail = metrics[-window:]
    return sum(getattr(m, name) for m in tail) / len(tail) if tail else float("nan")


def write_metrics_csv(metrics: Sequence[IterationMetrics], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for m in metrics:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(m).values()])


def write_metrics_jsonl(metrics: Sequence[IterationMetrics], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in metrics:
            fh.write(json.dumps(asdict(m)) + "\n")
