#!/usr/bin/env python3
"""Benchmark the jitted range-query kernels against the pure-numpy fallback.

Times the two implementations directly (no env flag needed) over growing
peer counts, plus one end-to-end run on each backend via subprocess.

    python3 benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np

from mcpsim import _kernels as kernels


def _cloud(n, rng):
    lats = 51.5 + (rng.random(n) - 0.5) * 0.01
    lons = -0.18 + (rng.random(n) - 0.5) * 0.01
    active = rng.random(n) < 0.9
    # a tick rarely has more than a few dozen simultaneous broadcasters
    senders = rng.integers(0, n, size=min(64, max(4, n // 20))).astype(np.int64)
    return lats, lons, senders, active


def _time(fn, *args, repeats=10):
    fn(*args)  # warm (JIT compile / cache load)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    if kernels.BACKEND != "numba":
        print("numba backend unavailable; nothing to compare")
        return
    rng = np.random.default_rng(1)
    print(f"{'peers':>8} {'senders':>8} {'numba':>12} {'numpy':>12} {'speedup':>8}")
    for n in (100, 1_000, 10_000, 50_000):
        lats, lons, senders, active = _cloud(n, rng)
        t_nb = _time(kernels.range_mask_numba, lats, lons, senders, active, 10.0)
        t_np = _time(kernels.range_mask_numpy, lats, lons, senders, active, 10.0)
        print(
            f"{n:>8} {len(senders):>8} {t_nb * 1e3:>10.3f}ms {t_np * 1e3:>10.3f}ms"
            f" {t_np / t_nb:>7.1f}x"
        )


END_TO_END = """
import time
from mcpsim import SimConfig, Scenario, FieldSpec, WayPoint, run
scn = Scenario(field_areas=[FieldSpec(300.0, 101, WayPoint(51.4983, -0.1791))])
cfg = SimConfig(duration_s=3600, period_s=1, share_probability=0.5, seed=7, replications=1)
run(cfg, scn)  # warm
t0 = time.perf_counter()
run(cfg, scn)
print(f"{time.perf_counter() - t0:.2f}")
"""


def bench_end_to_end():
    print("\nfull dense-field run (101 peers, 3600 ticks, period 1):")
    for backend in ("numba", "numpy"):
        env = dict(os.environ, MCPSIM_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, "-c", END_TO_END], capture_output=True, text=True, env=env
        )
        if out.returncode != 0:
            print(f"  {backend:>6}: failed\n{out.stderr}")
            continue
        print(f"  {backend:>6}: {out.stdout.strip()}s")


if __name__ == "__main__":
    print(f"selected backend: {kernels.BACKEND}")
    bench_kernels()
    bench_end_to_end()
