"""Group-relative advantages, the asymmetric-clip surrogate and dynamic filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, PivotError


@dataclass(frozen=True)
class DapoConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28
    std_epsilon: float = 1e-8
    # "group": divide by the group's token count; "batch": by the batch's
    token_normalization: str = "group"

    def __post_init__(self) -> None:
        for name in ("eps_low", "eps_high"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 < v < 1.0:
                raise ConfigError(f"dapo.{name} must lie in (0, 1), got {v!r}")
        if not isinstance(self.std_epsilon, (int, float)) or not (
                math.isfinite(self.std_epsilon) and self.std_epsilon >= 0):
            raise ConfigError("dapo.std_epsilon must be a finite number >= 0")
        if self.token_normalization not in ("group", "batch"):
            raise ConfigError("dapo.token_normalization must be 'group' or 'batch'")


@dataclass
class Trajectory:
    old_logprobs: np.ndarray
    new_logprobs: np.ndarray
    reward: float
    correct: bool

    def __post_init__(self) -> None:
        self.old_logprobs = np.asarray(self.old_logprobs, dtype=np.float64)
        self.new_logprobs = np.asarray(self.new_logprobs, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.old_logprobs)


@dataclass
class RolloutGroup:
    query_id: str
    trajectories: list[Trajectory] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.trajectories) < 2:
            raise PivotError("GROUP_TOO_SMALL", f"group {self.query_id!r} has "
                             f"{len(self.trajectories)} trajectories, need >= 2")
        for i, tr in enumerate(self.trajectories):
            if len(tr.old_logprobs) != len(tr.new_logprobs):
                raise PivotError("MISALIGNED_LOGPROBS", f"trajectory {i} of {self.query_id!r}")
            if not math.isfinite(tr.reward):
                raise PivotError("NONFINITE_REWARD", f"trajectory {i} of {self.query_id!r}")

    @property
    def rewards(self) -> list[float]:
        return [t.reward for t in self.trajectories]

    @property
    def num_tokens(self) -> int:
        return sum(len(t) for t in self.trajectories)


def group_advantages(rewards: Sequence[float], cfg: DapoConfig = DapoConfig()) -> np.ndarray:
    """Per-trajectory advantage, shared by every token of that trajectory.

    Uses the population standard deviation. A group whose rewards are all
    equal gets zero advantages.
    """
    if len(rewards) < 2:
        raise PivotError("GROUP_TOO_SMALL", f"need >= 2 rewards, got {len(rewards)}")
    return _kernels.group_advantages(np.asarray(rewards, dtype=np.float64), cfg.std_epsilon)


def is_informative(group: RolloutGroup) -> bool:
    n_correct = sum(1 for t in group.trajectories if t.correct)
    return 0 < n_correct < len(group.trajectories)


def dynamic_filter(groups: Sequence[RolloutGroup]) -> list[RolloutGroup]:
    """Keep groups with at least one correct and one incorrect trajectory."""
    return [g for g in groups if is_informative(g)]


def _flatten(group: RolloutGroup, advantages: Sequence[float]):
    if len(advantages) != len(group.trajectories):
        raise PivotError("MISALIGNED_LOGPROBS",
                         f"{len(advantages)} advantages for {len(group.trajectories)} trajectories")
    old = np.concatenate([t.old_logprobs for t in group.trajectories])
    new = np.concatenate([t.new_logprobs for t in group.trajectories])
    adv = np.concatenate([np.full(len(t), float(a)) for t, a in zip(group.trajectories, advantages)])
    return old, new, adv


def _surrogate_sum(group, advantages, cfg):
    old, new, adv = _flatten(group, advantages)
    try:
        return _kernels.clipped_surrogate(old, new, adv, cfg.eps_low, cfg.eps_high)
    except ValueError as exc:
        raise PivotError("MISALIGNED_LOGPROBS", str(exc)) from None


def surrogate_objective(group: RolloutGroup, advantages: Sequence[float],
                        cfg: DapoConfig = DapoConfig()) -> float:
    """Token-mean clipped surrogate over one group."""
    n = group.num_tokens
    if n == 0:
        return 0.0
    total, _ = _surrogate_sum(group, advantages, cfg)
    return total / n


JacobianCallback = Callable[[int], np.ndarray]


def surrogate_gradient(group: RolloutGroup, advantages: Sequence[float], cfg: DapoConfig,
                       param_jacobian: JacobianCallback, n_params: int | None = None,
                       normalizer: int | None = None) -> np.ndarray:
    """Exact gradient of :func:`surrogate_objective` with respect to the policy parameters.

    ``param_jacobian(i)`` returns the ``(len(tau_i), P)`` matrix of
    d(new log-prob)/d(theta) for trajectory ``i``. Tokens on the binding
    clipped branch contribute nothing. Rows are reduced in index order.
    """
    _, coef = _surrogate_sum(group, advantages, cfg)
    rows = []
    for i, tr in enumerate(group.trajectories):
        jac = np.asarray(param_jacobian(i), dtype=np.float64)
        if jac.ndim != 2 or jac.shape[0] != len(tr):
            raise PivotError("MISALIGNED_LOGPROBS",
                             f"jacobian for trajectory {i} has shape {jac.shape}, "
                             f"expected ({len(tr)}, P)")
        rows.append(jac)
    if not rows or sum(r.shape[0] for r in rows) == 0:
        return np.zeros(n_params or 0)
    jac_all = np.concatenate(rows, axis=0)
    n = normalizer if normalizer is not None else group.num_tokens
    return _kernels.accumulate_rows(coef, jac_all) / n


def batch_surrogate_objective(groups: Sequence[RolloutGroup],
                              advantages: Sequence[Sequence[float]],
                              cfg: DapoConfig = DapoConfig()) -> float:
    """Surrogate over several groups.

    With ``token_normalization="group"`` each group is token-averaged and the
    groups are averaged; with ``"batch"`` all tokens share one denominator.
    """
    if not groups:
        return 0.0
    if cfg.token_normalization == "group":
        return sum(surrogate_objective(g, a, cfg) for g, a in zip(groups, advantages)) / len(groups)
    total = sum(_surrogate_sum(g, a, cfg)[0] for g, a in zip(groups, advantages))
    n = sum(g.num_tokens for g in groups)
    return total / n if n else 0.0
