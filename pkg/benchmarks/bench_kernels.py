"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends get identical pre-drawn inputs; the script checks that the
outputs agree before reporting timings.
"""
import argparse
import time

import numpy as np

from dgff_extremes import kernels
from dgff_extremes.lattice import linf_ball_offsets
from dgff_extremes.walks import one_dim_return_table


def cases(rng):
    d = 3
    steps = rng.integers(0, 2 * d, size=(2000, 2000), dtype=np.uint8)
    choices = rng.integers(0, d, size=(500, 5000), dtype=np.uint8)
    q = one_dim_return_table(5000)
    killed = rng.integers(0, 2 * d, size=(500, 4000), dtype=np.uint8)
    n = 16
    p = rng.random(n ** 3) * 1e-3
    labels = np.where(rng.random(n ** 3) < 0.8, 0, -1).astype(np.int64)
    offsets = np.ascontiguousarray(linf_ball_offsets(3, d))
    pv = rng.random(len(offsets))
    return {
        "walk_first_returns": lambda k: k.walk_first_returns(steps, d),
        "coordinate_return_series": lambda k: k.coordinate_return_series(choices, q, d, 100),
        "killed_walk_visits": lambda k: k.killed_walk_visits(killed, np.array([8, 8, 8]),
                                                             np.array([8, 8, 9]), 16, d),
        "neighborhood_sums": lambda k: k.neighborhood_sums(p, labels, (n, n, n), offsets, pv),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled backend not available; only the Python fallback is installed")
    rng = np.random.default_rng(12345)
    print(f"{'kernel':28s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, fn in cases(rng).items():
        times, outs = {}, {}
        for b, mod in backends.items():
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                outs[b] = fn(mod)
                best = min(best, time.perf_counter() - t0)
            times[b] = best
        if len(outs) == 2:
            assert _same(outs["cython"], outs["python"]), f"{name}: backends disagree"
        speed = times["python"] / times["cython"] if len(times) == 2 else float("nan")
        print(f"{name:28s} " + " ".join(f"{times[b]:11.4f}s" for b in backends) + f"   {speed:7.1f}x")


if __name__ == "__main__":
    main()
