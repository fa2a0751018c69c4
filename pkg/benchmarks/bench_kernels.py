"""Throughput comparison between the compiled and pure-Python kernels.

Run as: python3 benchmarks/bench_kernels.py [n_events]
Both backends consume identical random streams, so the workloads match
event for event and the ratio is a clean implementation comparison.
"""

import math
import sys
import time

from soslab import _purekernels
from soslab.rng import RngSpec

try:
    from soslab import _kernels
except ImportError:
    _kernels = None


def bench_simulate(mod, n_events, L=16, M=8, beta=2.0, seed=1):
    bg = RngSpec(seed).bit_generator()
    t0 = time.perf_counter()
    out = mod.simulate_zero((0,) * L, beta, M, 0, math.inf, -1, n_events, 0, bg)
    elapsed = time.perf_counter() - t0
    assert out[4] == n_events
    return n_events / elapsed


def bench_couple(mod, horizon, L=16, M=8, beta=1.0, seed=2):
    bg = RngSpec(seed).bit_generator()
    t0 = time.perf_counter()
    out = mod.couple_zero((0,) * L, beta, M, M - 1, horizon, 0, bg)
    elapsed = time.perf_counter() - t0
    return out[10] / elapsed  # marks per second


def bench_chain(mod, n_steps, L=16, cut=4, beta=2.0, seed=3):
    shapes = ((((0, 0), (0, 1), (0, 2), (0, 3)), 0.03),)
    bg = RngSpec(seed).bit_generator()
    t0 = time.perf_counter()
    mod.metropolis_catalog((0,) * L, beta, cut, n_steps, bg, shapes, L // 2)
    elapsed = time.perf_counter() - t0
    return n_steps / elapsed


def main():
    n_events = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
    horizon = 50.0
    n_steps = max(n_events // 4, 10_000)
    rows = [("pure", _purekernels)]
    if _kernels is not None:
        rows.append(("compiled", _kernels))
    results = {}
    for name, mod in rows:
        sim = bench_simulate(mod, n_events)
        cpl = bench_couple(mod, horizon)
        chn = bench_chain(mod, n_steps)
        results[name] = (sim, cpl, chn)
        print(
            f"{name:>9}: simulate {sim:12.0f} events/s   couple {cpl:12.0f} marks/s"
            f"   chain {chn:12.0f} steps/s"
        )
    if len(results) == 2:
        s = results["compiled"][0] / results["pure"][0]
        c = results["compiled"][1] / results["pure"][1]
        h = results["compiled"][2] / results["pure"][2]
        print(
            f"{'speedup':>9}: simulate {s:11.1f}x            couple {c:11.1f}x"
            f"            chain {h:11.1f}x"
        )


if __name__ == "__main__":
    main()
