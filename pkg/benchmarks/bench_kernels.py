"""Compiled vs pure-Python Gibbs kernel.

    python3 benchmarks/bench_kernels.py [--draws N] [--repeats R]

Runs the systematic-scan sampler on two shipped models with each backend,
checks that the counts are identical and prints draws per second.
"""

import argparse
import time

import numpy as np

from icr import kernels
from icr.baselines import gibbs_sample
from icr.model import fixture_path, load_model


def timed(fn, repeats):
    best, out = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=200_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    if kernels.run_chain_c is None:
        print("compiled kernel not built; only the Python backend is available")
    cases = [("example5_sticky", None), ("example6_a1", ["f1|234", "f2|134", "f3|124", "f4|123"])]
    print(f"{'model':<18}{'backend':<9}{'seconds':>10}{'draws/s':>14}")
    for name, order in cases:
        m = load_model(fixture_path(name))
        order = order or list(m.block_ids)
        results = {}
        for backend in ("cython", "python"):
            if backend == "cython" and kernels.run_chain_c is None:
                continue
            trace, secs = timed(lambda: gibbs_sample(m, order, args.draws, 1000, seed=1, backend=backend),
                                args.repeats)
            results[backend] = (trace.counts, secs)
            print(f"{name:<18}{backend:<9}{secs:>10.4f}{args.draws / secs:>14,.0f}")
        if len(results) == 2:
            same = np.array_equal(results["cython"][0], results["python"][0])
            speedup = results["python"][1] / results["cython"][1]
            print(f"{'':<18}speedup {speedup:.1f}x, identical counts: {same}")


if __name__ == "__main__":
    main()
