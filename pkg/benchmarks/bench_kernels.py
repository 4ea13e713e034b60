"""Time the compiled kernels against the pure-Python fallback on identical inputs.

    python3 benchmarks/bench_kernels.py [--steps N] [--valleys N]
"""
import argparse
import time

import numpy as np

from valleywalk import kernels
from valleywalk.env_model import EnvironmentModel
from valleywalk import walker
from valleywalk.rng import stream


def _walk_case(mod, steps: int):
    omega = np.ascontiguousarray(np.clip(stream(1, 1).beta(3.0, 1.5, size=steps + 10), 1e-9, 1 - 1e-9))
    u = stream(1, 2).random(steps)
    start = time.perf_counter()
    out = mod.walk(omega, 5, -1, omega.size + 5, -1, 0, u, 0, steps)
    return time.perf_counter() - start, out


def _batch_case(mod, size: int, fast: bool):
    """The full batch driver (restarts included) with ``mod`` swapped in as its kernel module."""
    model = EnvironmentModel.beta(3.0, 1.5)
    saved = walker.K
    walker.K = mod
    try:
        start = time.perf_counter()
        out = walker.crossing_time_batch(model, size, seed=7, batch=0, fast=fast)
        elapsed = time.perf_counter() - start
    finally:
        walker.K = saved
    return elapsed, (out.tau.tobytes(), out.restarts)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=2_000_000)
    parser.add_argument("--valleys", type=int, default=20_000)
    args = parser.parse_args()
    compiled = kernels.load("cython")
    python = kernels.load("python")
    cases = [("walk, %d steps" % args.steps, lambda m: _walk_case(m, args.steps)),
             ("crossing batch fast, %d samples" % args.valleys, lambda m: _batch_case(m, args.valleys, True)),
             ("crossing batch direct, %d samples" % args.valleys, lambda m: _batch_case(m, args.valleys, False))]
    print("%-40s %12s %12s %9s  %s" % ("case", "cython [s]", "python [s]", "speedup", "identical"))
    for name, fn in cases:
        tc, oc = fn(compiled)
        tp, op = fn(python)
        print("%-40s %12.4f %12.4f %9.1f  %s" % (name, tc, tp, tp / tc, oc == op))


if __name__ == "__main__":
    main()
