"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (numba compiles on first call), then timed as
the best of ``--repeat`` runs. Outputs of both versions are compared before
timing.
"""

import argparse
import time

import numpy as np

from msdiar import kernels
from msdiar._accel import NUMBA_AVAILABLE


def best_time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # overlap: 1 h session, 0.5 s base scale, ~1600 turns
    seg_start = np.arange(0, 3_600_000 - 500, 250, dtype=np.int64)
    seg_end = seg_start + 500
    dur = rng.integers(500, 4000, size=1600)
    turn_start = np.concatenate(([0], np.cumsum(dur)[:-1])).astype(np.int64)
    turn_end = turn_start + dur
    turn_spk = rng.integers(0, 4, size=len(dur)).astype(np.int64)
    yield "overlap_durations", (seg_start, seg_end, turn_start, turn_end, turn_spk, 4)

    # nearest center: base vs 1.5 s scale over 40 regions
    q = np.sort(rng.integers(0, 7_200_000, size=14_000)).astype(np.int64)
    r = np.sort(rng.integers(0, 7_200_000, size=4_800)).astype(np.int64)
    yield "nearest_center", (q, q * 40 // 7_200_001, r, r * 40 // 7_200_001)

    A = rng.random((800, 800))
    A = (A + A.T) / 2
    np.fill_diagonal(A, 1.0)
    yield "topp_binarize", (A, 40)

    M = rng.normal(size=(1500, 384))
    W = rng.normal(scale=0.01, size=(3, 384))
    b = np.zeros(3)
    I = rng.integers(0, 1500, size=200_000).astype(np.int64)
    J = rng.integers(0, 1500, size=200_000).astype(np.int64)
    yield "pair_softmax_sum", (M, W, b, I, J)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        print("numba not installed; only the numpy kernels can run")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, case in cases(rng):
        np_fn = getattr(kernels, name + "_numpy")
        nb_fn = getattr(kernels, name + "_loop")
        t_np = best_time(np_fn, case, args.repeat)
        if NUMBA_AVAILABLE:
            a, b = np_fn(*case), nb_fn(*case)
            if not np.allclose(a, b, rtol=1e-9, atol=1e-9):
                raise SystemExit(f"{name}: numba and numpy outputs differ")
            t_nb = best_time(nb_fn, case, args.repeat)
            print(f"{name:<18} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:<18} {1e3 * t_np:10.2f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
