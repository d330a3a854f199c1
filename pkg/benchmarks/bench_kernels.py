"""Numba vs numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--n 4000] [--bins 100] [--repeat 5]
"""
import argparse
import time

import numpy as np

from tonefair import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4000, help="histograms / KDE support points")
    ap.add_argument("--bins", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()

    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    P = rng.random((a.n, a.bins))
    P /= P.sum(axis=1, keepdims=True)
    q = rng.random(a.bins)
    q /= q.sum()
    d = rng.random(a.n)
    h = 0.05

    # first calls compile (or load the on-disk cache)
    t0 = time.perf_counter()
    K.batch_distances_numba(P[:2], q, K.WD, 1.0)
    K.gaussian_kde_numba(d[:2], d[:2], h)
    print(f"numba warm-up: {time.perf_counter() - t0:.2f}s")

    print(f"{'kernel':<14}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  max|diff|")
    names = ["AD", "CVM", "FS", "HS", "HM", "KL", "KS", "KP", "KD", "PF", "WD"]
    for code, name in enumerate(names):
        ref = K.batch_distances_numpy(P, q, code, 1.0)
        fast = K.batch_distances_numba(P, q, code, 1.0)
        tn = best_of(lambda: K.batch_distances_numpy(P, q, code, 1.0), a.repeat)
        tj = best_of(lambda: K.batch_distances_numba(P, q, code, 1.0), a.repeat)
        print(f"{'dist ' + name:<14}{tn * 1e3:>10.2f}{tj * 1e3:>10.2f}{tn / tj:>8.1f}x  {np.abs(ref - fast).max():.1e}")

    ref = K.gaussian_kde_numpy(d, d, h)
    fast = K.gaussian_kde_numba(d, d, h)
    tn = best_of(lambda: K.gaussian_kde_numpy(d, d, h), a.repeat)
    tj = best_of(lambda: K.gaussian_kde_numba(d, d, h), a.repeat)
    print(f"{'kde':<14}{tn * 1e3:>10.2f}{tj * 1e3:>10.2f}{tn / tj:>8.1f}x  {np.abs(ref - fast).max():.1e}")


if __name__ == "__main__":
    main()
