"""Time tree growing and scoring on the numba and numpy backends.

    python3 benchmarks/bench_trees.py [--rows 900] [--features 124] [--trees 20]

Both backends grow the same trees (checked below); only the wall clock differs.
The first numba call includes JIT compilation (or a cache load), so it is
reported separately.
"""
import argparse
import time

import numpy as np

from odx import _accel
from odx.trees import GINI, NEWTON, bin_matrix, grow_tree


def make_data(n, d, seed):
    # sparse counts, like the visit-count feature vectors
    rng = np.random.default_rng(seed)
    X = rng.poisson(0.6, size=(n, d)).astype(np.float64)
    w = rng.normal(size=d) * (rng.random(d) < 0.1)
    y = (X @ w + rng.normal(scale=0.5, size=n) > 0).astype(np.float64)
    return X, y


def grow_many(Xb, y, n_trees, depth, mode, use_numba):
    trees = []
    a = np.ones_like(y)
    b = y if mode == GINI else y - 0.5
    for i in range(n_trees):
        trees.append(grow_tree(Xb, a, b, max_depth=depth, min_leaf=1, max_features=int(np.sqrt(Xb.shape[1])),
                               mode=mode, seed=i + 1, use_numba=use_numba))
    return trees


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=900)
    ap.add_argument("--features", type=int, default=124)
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--depth", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not _accel.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare")
        return
    X, y = make_data(args.rows, args.features, args.seed)
    Xb = bin_matrix(X)
    print(f"data {X.shape}, {args.trees} trees, depth {args.depth}, best of {args.repeat}")

    t = time.perf_counter()
    grow_many(Xb, y, 1, 2, GINI, True)
    grow_many(Xb, y, 1, 2, NEWTON, True)
    print(f"numba first call (compile or cache load): {time.perf_counter() - t:.2f}s")

    for name, mode in (("gini", GINI), ("newton", NEWTON)):
        t_nb, trees_nb = timed(lambda: grow_many(Xb, y, args.trees, args.depth, mode, True), args.repeat)
        t_np, trees_np = timed(lambda: grow_many(Xb, y, args.trees, args.depth, mode, False), args.repeat)
        same = all(np.array_equal(a.feature, b.feature) and np.allclose(a.value, b.value)
                   for a, b in zip(trees_nb, trees_np))
        print(f"grow {name:6s} numba {t_nb:8.3f}s  numpy {t_np:8.3f}s  speedup {t_np / t_nb:6.1f}x  identical={same}")

        s_nb, p_nb = timed(lambda: [t.apply(X, True) for t in trees_nb], args.repeat)
        s_np, p_np = timed(lambda: [t.apply(X, False) for t in trees_nb], args.repeat)
        same = all(np.array_equal(a, b) for a, b in zip(p_nb, p_np))
        print(f"apply {name:5s} numba {s_nb:8.3f}s  numpy {s_np:8.3f}s  speedup {s_np / s_nb:6.1f}x  identical={same}")


if __name__ == "__main__":
    main()
