"""Compare the numba kernels against their pure-numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Both variants are imported from the same module, so the comparison does not
depend on MRF_DISABLE_NUMBA. The first numba call (compilation) is excluded.
"""
import argparse
import timeit

import numpy as np

from blockrefine import _kernels as K


def _cases(scale, rng):
    n = int(4096 * scale)
    sims = rng.normal(size=(256, n))
    X = rng.normal(size=(n, 64))
    C = rng.normal(size=(16, 64))
    lab = rng.integers(0, 16, n)
    a = rng.integers(0, 10, n)
    b = rng.integers(0, 10, n)
    ra = np.bincount(a, minlength=10).astype(np.int64)
    rb = np.bincount(b, minlength=10).astype(np.int64)
    Xs = X[: int(1024 * scale)]
    labs = lab[: len(Xs)]
    cost = rng.random((64, 64))
    return [
        ("topk_rows", (sims, 20)),
        ("assign_nearest", (X, C)),
        ("minibatch_update", (C.copy(), np.ones(16), X[:256], lab[:256])),
        ("contingency", (a, b, 10, 10)),
        ("expected_mutual_info", (ra, rb, n)),
        ("cluster_distance_sums", (Xs, labs, 16)),
        ("hungarian", (cost,)),
    ]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--scale", type=float, default=1.0)
    args = p.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in _cases(args.scale, rng):
        f_np = getattr(K, f"{name}_np")
        f_nb = getattr(K, f"{name}_nb")
        f_nb(*call_args)  # compile
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<24}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
