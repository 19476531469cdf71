"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel at training-step shapes (batch 32, d=8, hidden 32, 101
bins, K=4) plus one full RAPO step, and checks both backends agree.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from rapolab import _pykernels

try:
    from rapolab import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None


def workload(n=32, d=8, h=32, b=101, k=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w1 = rng.normal(0, 0.3, (d, h))
    b1 = rng.normal(0, 0.1, h)
    w2 = rng.normal(0, 0.3, (h, b))
    b2 = rng.normal(0, 0.1, b)
    hidden, logp = _pykernels.mlp_forward(x, w1, b1, w2, b2)
    g = rng.standard_normal((n, b))
    u = rng.random((n, k))
    scores = rng.random((n, k))
    mu = scores.mean(axis=1)
    var = scores.var(axis=1)
    mos = rng.random(n)
    return {
        "mlp_forward": (x, w1, b1, w2, b2),
        "mlp_backward": (x, hidden, w2, g),
        "sample_bins": (logp, u),
        "rank_reward_matrix": (scores, mu, var, mos, 1e-6),
    }


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(p, q) for p, q in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def bench(repeat: int) -> dict:
    args = workload()
    out = {}
    for name, a in args.items():
        row = {}
        for label, mod in (("python", _pykernels), ("cython", _ckernels)):
            if mod is None:
                continue
            fn = getattr(mod, name)
            t = timeit.Timer(lambda fn=fn, a=a: fn(*a))
            n, _ = t.autorange()
            row[label + "_us"] = min(t.repeat(repeat, n)) / n * 1e6
        if _ckernels is not None:
            row["speedup"] = row["python_us"] / row["cython_us"]
            row["max_abs_diff"] = _max_diff(getattr(_pykernels, name)(*a), getattr(_ckernels, name)(*a))
        out[name] = row
    return out


_STEP_SCRIPT = """
import time
from rapolab import BACKEND
from rapolab.dataset import standard_task
from rapolab.policy import init_policy
from rapolab.rapo import RapoConfig, init_state, train
tr, _ = standard_task(0)
cfg = RapoConfig(lr=0.1)
state = init_state(init_policy(8, seed=0))
train(state, tr, cfg, 20)
t = time.perf_counter()
train(state, tr, cfg, {steps})
print(BACKEND, (time.perf_counter() - t) / {steps} * 1e6)
"""


def bench_steps(steps: int) -> dict:
    """Mean wall time of one full RAPO training step under each backend."""
    out = {}
    for forced in ("0", "1"):
        env = dict(os.environ, RAPOLAB_PURE_PYTHON=forced)
        res = subprocess.run(
            [sys.executable, "-c", _STEP_SCRIPT.format(steps=steps)], env=env, capture_output=True, text=True, check=True
        )
        backend, us = res.stdout.split()
        out[backend + "_us"] = float(us)
    if "cython_us" in out:
        out["speedup"] = out["python_us"] / out["cython_us"]
    return out


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--steps", type=int, default=300, help="training steps for the end-to-end timing")
    args = p.parse_args()
    result = bench(args.repeat)
    result["rapo_train_step"] = bench_steps(args.steps)
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
