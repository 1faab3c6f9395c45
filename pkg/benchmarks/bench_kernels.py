"""Compare the compiled and pure-Python plant kernels.

Checks that both backends produce the same states on a shared batch, then
times one control step for several batch sizes.

Usage: python benchmarks/bench_kernels.py [--repeats 20] [--sizes 1 16 256 1024]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from rocketland.config import InitConfig, PlantConfig
from rocketland.dynamics import kernel_backends, pack_params, sample_initial_states, sample_winds, wind_vectors


def make_batch(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    state = sample_initial_states(rng, n, InitConfig())
    command = rng.uniform(-1.0, 1.0, (n, 4))
    wind = np.ascontiguousarray(wind_vectors(sample_winds(rng, n)))
    return state, command, wind


def max_discrepancy(n: int = 256, steps: int = 100) -> float:
    backends = kernel_backends()
    params = pack_params(PlantConfig())
    state, command, wind = make_batch(n)
    a, b = state.copy(), state.copy()
    for _ in range(steps):
        backends["cython"](a, command, wind, params)
        backends["python"](b, command, wind, params)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--sizes", type=int, nargs="+", default=[1, 16, 256, 1024])
    args = ap.parse_args()

    backends = kernel_backends()
    if "cython" not in backends:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
    print(f"max relative discrepancy after 100 steps: {max_discrepancy():.2e}")
    params = pack_params(PlantConfig())
    print(f"{'batch':>6} {'python us/step':>15} {'cython us/step':>15} {'speedup':>8}")
    for n in args.sizes:
        state, command, wind = make_batch(n)
        times = {}
        for name, fn in backends.items():
            s = state.copy()
            times[name] = min(timeit.repeat(lambda: fn(s, command, wind, params), number=5,
                                            repeat=args.repeats)) / 5 * 1e6
        print(f"{n:>6} {times['python']:>15.1f} {times['cython']:>15.1f} {times['python'] / times['cython']:>7.1f}x")


if __name__ == "__main__":
    main()
