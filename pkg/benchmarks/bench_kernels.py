"""Time the compiled bicycle kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat R]

Prints one line per kernel with the median wall time of both backends and
the speed-up.  Horizon 50 matches the shipped car scenario.
"""
import argparse
import statistics
import time

import numpy as np

from safexplore._core import _fallback

try:
    from safexplore._core import _bicycle as compiled
except ImportError:  # pragma: no cover - extension not built
    compiled = None

DT, LR, N = 0.2, 1.7, 50


def _median_time(fn, args, repeat, inner):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        samples.append((time.perf_counter() - t0) / inner)
    return statistics.median(samples)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    if compiled is None:
        raise SystemExit("compiled extension not available; build with pip install -e . --no-build-isolation")
    rng = np.random.default_rng(0)
    x0 = np.array([1.5, 0.0, 0.0, 5.0, 0.0])
    U = np.column_stack([rng.uniform(-1, 1, N), rng.uniform(-0.17, 0.17, N)])
    cases = [
        ("bicycle_step", (x0, U[0], DT, LR), 2000),
        ("bicycle_rollout", (x0, U, DT, LR), 200),
        ("bicycle_rollout_sens", (x0, U, DT, LR), 50),
    ]
    print(f"{'kernel':<22} {'python [us]':>12} {'compiled [us]':>14} {'speed-up':>9}")
    for name, fargs, inner in cases:
        tp = _median_time(getattr(_fallback, name), fargs, args.repeat, inner)
        tc = _median_time(getattr(compiled, name), fargs, args.repeat, inner)
        print(f"{name:<22} {tp * 1e6:>12.1f} {tc * 1e6:>14.1f} {tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
