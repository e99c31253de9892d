from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from checks import gradient_check, kept_fraction
from pivotrl.dapo import (
    DapoConfig, RolloutGroup, Trajectory, batch_surrogate_objective, dynamic_filter,
    group_advantages, is_informative, surrogate_gradient, surrogate_objective,
)
from pivotrl.errors import ConfigError, PivotError

NO_EPS = DapoConfig(std_epsilon=0.0)


def group_of(flags, rewards=None, lengths=None, old=None, new=None):
    rewards = rewards if rewards is not None else [float(f) for f in flags]
    lengths = lengths or [1] * len(flags)
    trajs = []
    for i, (f, r, n) in enumerate(zip(flags, rewards, lengths)):
        o = old[i] if old is not None else [0.0] * n
        w = new[i] if new is not None else [0.0] * n
        trajs.append(Trajectory(o, w, r, bool(f)))
    return RolloutGroup("q", trajs)


def test_advantages_fixture():
    adv = group_advantages([1, 0, 1, 0], NO_EPS)
    assert np.max(np.abs(adv - np.array([1, -1, 1, -1]))) <= 1e-12


def test_constant_rewards_zero_advantage():
    assert np.all(group_advantages([0.7] * 5) == 0.0)
    assert np.all(group_advantages([0.1 + 0.2] * 3 + [0.3000000000000000444]) == 0.0)


def test_group_too_small():
    with pytest.raises(PivotError) as ei:
        group_advantages([1.0])
    assert ei.value.code == "GROUP_TOO_SMALL"
    with pytest.raises(PivotError):
        group_of([1])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=32))
def test_advantage_normalization(rewards):
    adv = group_advantages(rewards, NO_EPS)
    g = len(rewards)
    assert abs(adv.sum()) <= 1e-9 * g
    if min(rewards) != max(rewards) and np.std(rewards) > 1e-6:
        assert abs(np.std(adv) - 1.0) <= 1e-9
    shifted = group_advantages([r + 3.5 for r in rewards], NO_EPS)
    if np.std(rewards) > 1e-6:
        assert np.allclose(adv, shifted, atol=1e-9)


@pytest.mark.parametrize("flags,kept", [
    ([1, 1, 1, 1], False), ([0, 0, 0, 0], False), ([1, 0, 0, 0], True), ([0, 1], True),
])
def test_filter_fixtures(flags, kept):
    g = group_of(flags)
    assert is_informative(g) == kept
    assert dynamic_filter([g]) == ([g] if kept else [])


def test_filter_idempotent_and_order_preserving():
    gs = [group_of(f) for f in ([1, 0], [1, 1], [0, 1, 1], [0, 0, 0])]
    once = dynamic_filter(gs)
    assert once == [gs[0], gs[2]]
    assert dynamic_filter(once) == once


def test_kept_fraction_matches_combinatorics():
    kept, p, sigma = kept_fraction(10_000, 4, seed=3)
    assert abs(kept - p) <= 3 * sigma


def test_surrogate_clip_above():
    g = group_of([1, 0], rewards=[1, 0], old=[[0.0], [0.0]], new=[[math.log(1.5)], [0.0]])
    # second token has A=0 and contributes 0; total over N=2 tokens
    assert surrogate_objective(g, [1.0, 0.0]) * 2 == pytest.approx(1.28, abs=1e-12)


def test_surrogate_negative_advantage_unclipped():
    g = group_of([1, 0], old=[[0.0], [0.0]], new=[[math.log(1.5)], [0.0]])
    assert surrogate_objective(g, [-1.0, 0.0]) * 2 == pytest.approx(-1.5, abs=1e-12)


def test_surrogate_identity_ratio_is_token_mean():
    g = group_of([1, 0, 1], lengths=[2, 3, 1])
    adv = [0.5, -1.0, 2.0]
    expected = (2 * 0.5 + 3 * -1.0 + 1 * 2.0) / 6
    assert surrogate_objective(g, adv) == pytest.approx(expected, abs=1e-15)


def test_misaligned_logprobs():
    with pytest.raises(PivotError) as ei:
        RolloutGroup("q", [Trajectory([0.0, 0.0], [0.0], 1.0, True), Trajectory([0.0], [0.0], 0, False)])
    assert ei.value.code == "MISALIGNED_LOGPROBS"
    with pytest.raises(PivotError):
        surrogate_objective(group_of([1, 0]), [1.0])


def test_nonfinite_reward():
    with pytest.raises(PivotError) as ei:
        group_of([1, 0], rewards=[float("nan"), 0.0])
    assert ei.value.code == "NONFINITE_REWARD"


def test_gradient_single_token_unclipped():
    r = 1.1
    g = group_of([1, 0], old=[[0.0], [0.0]], new=[[math.log(r)], [0.0]])
    jac = [np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])]
    grad = surrogate_gradient(g, [1.0, 0.0], DapoConfig(), lambda i: jac[i])
    assert grad == pytest.approx(np.array([r * 1.0, r * 2.0]) / 2)


def test_gradient_clipped_binding_is_zero():
    g = group_of([1, 0], old=[[0.0], [0.0]], new=[[math.log(1.5)], [0.0]])
    jac = [np.array([[1.0, 2.0]]), np.array([[5.0, 5.0]])]
    grad = surrogate_gradient(g, [1.0, 0.0], DapoConfig(), lambda i: jac[i])
    assert np.all(grad == 0.0)


def test_gradient_bad_jacobian_shape():
    g = group_of([1, 0])
    with pytest.raises(PivotError):
        surrogate_gradient(g, [1.0, -1.0], DapoConfig(), lambda i: np.zeros((3, 2)))


def test_gradient_matches_finite_differences():
    worst, _ = gradient_check(60, seed=11)
    assert worst < 1e-5


def test_batch_normalization_modes():
    g1 = group_of([1, 0], lengths=[1, 1])
    g2 = group_of([1, 0, 0], lengths=[2, 2, 2])
    adv = [[1.0, -1.0], [2.0, 0.0, 0.0]]
    per_group = batch_surrogate_objective([g1, g2], adv, DapoConfig())
    assert per_group == pytest.approx((0.0 + 4.0 / 6) / 2)
    batch = batch_surrogate_objective([g1, g2], adv, DapoConfig(token_normalization="batch"))
    assert batch == pytest.approx(4.0 / 8)
    assert batch_surrogate_objective([], [], DapoConfig()) == 0.0


@pytest.mark.parametrize("kwargs", [
    {"eps_low": 0.0}, {"eps_high": 1.0}, {"std_epsilon": -1.0}, {"token_normalization": "x"},
    {"std_epsilon": float("inf")},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        DapoConfig(**kwargs)
