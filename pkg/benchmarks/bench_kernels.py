"""Compiled core vs numpy fallback on the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and problem size with the median wall time of each
backend and the speedup. The conv rows straddle ``kernels.DIRECT_CONV_LIMIT``
so the dispatch crossover can be checked on the current machine.
"""

import argparse
import statistics
import time

import numpy as np

from hybridsnn import _pykernels, kernels


def timeit(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cases(rng):
    for ci, co, hw, k, s in ((2, 4, 16, 5, 1), (4, 8, 16, 3, 1), (8, 8, 32, 3, 1), (4, 8, 32, 5, 2),
                             (16, 16, 32, 3, 1), (32, 32, 64, 3, 1)):
        x, w = rng.normal(size=(ci, hw, hw)), rng.normal(size=(co, ci, k, k))
        ho = -(-hw // s)
        gy = rng.normal(size=(co, ho, ho))
        mults = co * ci * k * k * ho * ho
        tag = f"{ci}x{hw}x{hw} k{k} s{s} -> {co} ({mults / 1e3:.0f}k mult)"
        yield ("conv2d", tag, lambda m: m.conv2d(x, w, s, k // 2))
        yield ("conv2d_grad_input", tag, lambda m: m.conv2d_grad_input(gy, w, x.shape, s, k // 2))
        yield ("conv2d_grad_weight", tag, lambda m: m.conv2d_grad_weight(x, gy, k, s, k // 2))
    for n in (1_000, 100_000, 1_000_000):
        v, x = rng.normal(size=n), rng.normal(size=n) * 2
        yield ("lif_step", f"{n} neurons", lambda m: m.lif_step(v, x, 1 / 3, 0.0, 1.0))
    for n in (10_000, 1_000_000):
        idx = rng.integers(0, 2 * 64 * 64, n)
        yield ("accumulate", f"{n} events", lambda m: m.accumulate(idx, 2 * 64 * 64))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels._c is None:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'case':<40} {'compiled ms':>12} {'numpy ms':>10} {'speedup':>8}")
    for name, tag, fn in cases(rng):
        tc = timeit(lambda: fn(kernels._c), args.repeat)
        tp = timeit(lambda: fn(_pykernels), args.repeat)
        print(f"{name:<20} {tag:<40} {tc * 1e3:12.3f} {tp * 1e3:10.3f} {tp / tc:8.2f}")


if __name__ == "__main__":
    main()
