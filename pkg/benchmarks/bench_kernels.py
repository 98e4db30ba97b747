"""Time the Monte Carlo kernels under both backends.

    python3 benchmarks/bench_kernels.py --trials 2000000 --repeat 5

The first numba call compiles (or loads from the on-disk cache); it is
excluded from the timings and reported separately.  Both backends must
return identical results, which is checked on every run.
"""

import argparse
import time

import numpy as np

from qosmech import kernels

P_TRUE = [0.5, 0.9, 0.2, 0.7, 0.5, 0.6, 0.8, 0.4]
USAGE = np.linspace(1.0, 2.0, len(P_TRUE))
COMP = np.linspace(0.5, 3.0, len(P_TRUE))


def workloads(trials, key):
    return {
        "qos_available_count": lambda: kernels.qos_available_count(key, trials, 0.37),
        "reservation_counts": lambda: kernels.reservation_counts(key, trials, 0.6, 0.8),
        "overbook": lambda: kernels.overbook(key, trials, P_TRUE, 3, USAGE, COMP),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    kernels.set_threads(args.threads)
    key = kernels.derive_key(1234)

    print(f"trials={args.trials} repeat={args.repeat} threads={kernels.get_threads()}")
    print(f"{'kernel':<22}{'numpy s':>10}{'numba s':>10}{'speedup':>9}{'warmup s':>10}")
    for name in workloads(args.trials, key):
        kernels.set_backend("numba")
        fn = workloads(args.trials, key)[name]
        t0 = time.perf_counter()
        fn()
        warm = time.perf_counter() - t0
        t_nb, out_nb = best_of(fn, args.repeat)
        kernels.set_backend("numpy")
        t_np, out_np = best_of(workloads(args.trials, key)[name], args.repeat)
        if not same(out_nb, out_np):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<22}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x{warm:>10.3f}")


if __name__ == "__main__":
    main()
