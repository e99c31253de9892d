"""Compare the compiled kernels against the pure-Python fallback.

Run: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pivotrl._kernels import _pure, compiled


def cases(rng: np.random.Generator) -> dict:
    t = 6
    theta = rng.normal(0, 1, 8)
    u = rng.random(2 * t + 1)
    blocks, choices, _ = _pure.sample_episode(theta, u, t)
    old = rng.normal(-0.7, 0.2, 104)
    new = old + rng.normal(0, 0.1, 104)
    adv = rng.normal(0, 1, 104)
    coef = rng.normal(0, 1, 13)
    jac = rng.normal(0, 1, (13, 8))
    rewards = rng.normal(0, 1, 8)
    return {
        "sample_episode": lambda m: m.sample_episode(theta, u, t),
        "decision_logprobs": lambda m: m.decision_logprobs(theta, blocks, choices),
        "decision_jacobian": lambda m: m.decision_jacobian(theta, blocks, choices),
        "clipped_surrogate": lambda m: m.clipped_surrogate(old, new, adv, 0.2, 0.28),
        "accumulate_rows": lambda m: m.accumulate_rows(coef, jac),
        "group_advantages": lambda m: m.group_advantages(rewards, 1e-8),
    }


def bench_training(iterations: int) -> float:
    from pivotrl.dapo import DapoConfig
    from pivotrl.rewards import RewardConfig
    from pivotrl.toy_rl import ToyEnvConfig, TrainConfig, run_training

    t0 = timeit.default_timer()
    run_training(ToyEnvConfig(), RewardConfig(), DapoConfig(), TrainConfig(iterations=iterations), seed=0)
    return timeit.default_timer() - t0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20000)
    ap.add_argument("--iterations", type=int, default=500)
    args = ap.parse_args()

    ext = compiled()
    mods = {"python": _pure} if ext is None else {"python": _pure, "cython": ext}
    print(f"{'kernel':20s} " + " ".join(f"{name + ' us':>12s}" for name in mods) + "   speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        us = {k: 1e6 * timeit.timeit(lambda: fn(m), number=args.repeat) / args.repeat for k, m in mods.items()}
        speed = f"{us['python'] / us['cython']:8.1f}x" if "cython" in us else "       -"
        print(f"{name:20s} " + " ".join(f"{v:12.2f}" for v in us.values()) + f"  {speed}")

    # end to end: run_training in a child process per backend so the selection applies
    import os
    import subprocess
    import sys
    code = ("import sys; sys.path.insert(0, %r); import bench_kernels as b; "
            "print(b.bench_training(%d))" % (os.path.dirname(os.path.abspath(__file__)), args.iterations))
    for backend in mods:
        env = dict(os.environ, PIVOTRL_PURE_PYTHON="1" if backend == "python" else "0")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        print(f"training {args.iterations} iterations [{backend}]: {float(out.stdout):.2f}s")


if __name__ == "__main__":
    main()
