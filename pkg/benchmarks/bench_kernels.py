"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and workload with the median wall time of each
path and the speedup. The first numba call (compilation) is excluded.
"""

import argparse
import statistics
import time

import numpy as np

from semcom import kernels

WORKLOADS = {
    "conv2d_forward": [
        ("B=32 8x8x1 k3 c4", lambda r: (r.random((32, 8, 8, 1)), r.random((3, 3, 1, 4)), r.random(4), 1, 1)),
        ("B=64 28x28x1 k5 c8", lambda r: (r.random((64, 28, 28, 1)), r.random((5, 5, 1, 8)), r.random(8), 1, 2)),
    ],
    "conv2d_backward": [
        ("B=32 8x8x1 k3 c4", lambda r: (r.random((32, 8, 8, 1)), r.random((3, 3, 1, 4)), r.random((32, 8, 8, 4)), 1, 1)),
        ("B=64 28x28x1 k5 c8",
         lambda r: (r.random((64, 28, 28, 1)), r.random((5, 5, 1, 8)), r.random((64, 28, 28, 8)), 1, 2)),
    ],
    "bilinear": [
        ("16x16x1 -> 28x28", lambda r: (r.random((16, 16, 1)), 28, 28)),
        ("32x32x3 -> 28x28", lambda r: (r.random((32, 32, 3)), 28, 28)),
    ],
}


def _median_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run(repeat=20, seed=0):
    rows = []
    rng = np.random.default_rng(seed)
    for name, cases in WORKLOADS.items():
        for label, make in cases:
            args = make(rng)
            np_t = _median_time(kernels.NUMPY_KERNELS[name], args, repeat)
            nb = kernels.NUMBA_KERNELS.get(name)
            if nb is None:
                rows.append((name, label, np_t, None))
                continue
            nb(*args)
            rows.append((name, label, np_t, _median_time(nb, args, repeat)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':<16} {'workload':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, label, np_t, nb_t in run(args.repeat):
        if nb_t is None:
            print(f"{name:<16} {label:<20} {np_t * 1e3:>10.3f} {'n/a':>10} {'n/a':>8}")
        else:
            print(f"{name:<16} {label:<20} {np_t * 1e3:>10.3f} {nb_t * 1e3:>10.3f} {np_t / nb_t:>7.2f}x")


if __name__ == "__main__":
    main()
