"""Pure-Python kernels. Reference semantics for the compiled ``_ckernels``.

The toy policy has four two-way softmax blocks laid out in ``theta`` as
``[slot_type(2), perceive|keyword(2), perceive|plain(2), answer(2)]``. A
decision is a pair ``(block, choice)`` with ``choice`` in ``{0, 1}``.
"""

from __future__ import annotations

import math

import numpy as np

N_PARAMS = 8
SLOT_BLOCK, PERC_KW_BLOCK, PERC_PLAIN_BLOCK, ANSWER_BLOCK = 0, 1, 2, 3


def _logprob(l_chosen: float, l_other: float) -> float:
    d = l_other - l_chosen
    return -(max(d, 0.0) + math.log1p(math.exp(-abs(d))))


def _prob_first(l0: float, l1: float) -> float:
    d = l1 - l0
    if d >= 0.0:
        e = math.exp(-d)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(d))


def sample_episode(theta, uniforms, n_slots: int):
    """Sample one episode's decisions from pre-drawn uniforms.

    Decision order: (slot type, perceive) per slot, then the answer. Slot
    choice 0 is a keyword sentence; perceive choice 1 emits a perception;
    answer choice 0 is the first answer symbol. Returns
    ``(blocks, choices, logprobs)``.
    """
    n = 2 * n_slots + 1
    if len(uniforms) != n:
        raise ValueError(f"need {n} uniforms, got {len(uniforms)}")
    th = [float(x) for x in theta]
    blocks = np.empty(n, dtype=np.int64)
    choices = np.empty(n, dtype=np.int64)
    logprobs = np.empty(n, dtype=np.float64)
    for k in range(n):
        if k == n - 1:
            b = ANSWER_BLOCK
        elif k % 2 == 0:
            b = SLOT_BLOCK
        else:
            b = PERC_KW_BLOCK if choices[k - 1] == 0 else PERC_PLAIN_BLOCK
        l0, l1 = th[2 * b], th[2 * b + 1]
        c = 0 if float(uniforms[k]) < _prob_first(l0, l1) else 1
        blocks[k] = b
        choices[k] = c
        logprobs[k] = _logprob(l0, l1) if c == 0 else _logprob(l1, l0)
    return blocks, choices, logprobs


def decision_logprobs(theta, blocks, choices):
    th = [float(x) for x in theta]
    out = np.empty(len(blocks), dtype=np.float64)
    for k in range(len(blocks)):
        b, c = int(blocks[k]), int(choices[k])
        out[k] = _logprob(th[2 * b + c], th[2 * b + 1 - c])
    return out


def decision_jacobian(theta, blocks, choices):
    """Rows of d(log p(choice_k)) / d(theta) for each decision."""
    th = [float(x) for x in theta]
    jac = np.zeros((len(blocks), N_PARAMS), dtype=np.float64)
    for k in range(len(blocks)):
        b, c = int(blocks[k]), int(choices[k])
        p = math.exp(_logprob(th[2 * b + c], th[2 * b + 1 - c]))
        jac[k, 2 * b + c] = 1.0 - p
        jac[k, 2 * b + 1 - c] = p - 1.0
    return jac


def clipped_surrogate(old_lp, new_lp, adv, eps_low: float, eps_high: float):
    """Sum over tokens of ``min(r*A, clip(r, 1-eps_low, 1+eps_high)*A)``.

    Returns ``(total, coef)`` where ``coef[t]`` is the derivative of token t's
    term with respect to its new log-prob (zero where the clipped branch wins).
    """
    n = len(old_lp)
    if len(new_lp) != n or len(adv) != n:
        raise ValueError("misaligned token arrays")
    lo, hi = 1.0 - eps_low, 1.0 + eps_high
    coef = np.zeros(n, dtype=np.float64)
    total = 0.0
    for t in range(n):
        a = float(adv[t])
        r = math.exp(float(new_lp[t]) - float(old_lp[t]))
        unclipped = r * a
        clipped = min(max(r, lo), hi) * a
        if unclipped <= clipped:
            total += unclipped
            coef[t] = unclipped
        else:
            total += clipped
    return total, coef


def accumulate_rows(coef, jac):
    """``coef @ jac`` reduced sequentially in row order."""
    out = [0.0] * jac.shape[1]
    for k in range(jac.shape[0]):
        c = float(coef[k])
        if c == 0.0:
            continue
        row = jac[k]
        for j in range(jac.shape[1]):
            out[j] += c * float(row[j])
    return np.asarray(out, dtype=np.float64)


def group_advantages(rewards, std_epsilon: float):
    """``(R - mean) / (population std + std_epsilon)``; zeros when the group has no spread."""
    n = len(rewards)
    vals = [float(x) for x in rewards]
    out = np.zeros(n, dtype=np.float64)
    if min(vals) == max(vals):
        return out
    mean = 0.0
    for v in vals:
        mean += v
    mean /= n
    var = 0.0
    for v in vals:
        var += (v - mean) * (v - mean)
    std = math.sqrt(var / n)
    denom = std + std_epsilon
    if denom == 0.0:  # spread below float resolution
        return out
    for i in range(n):
        out[i] = (vals[i] - mean) / denom
    return out
