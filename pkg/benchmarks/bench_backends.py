#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the four hot kernels on a representative workload and checks that both
backends produce identical tree structures along the way. Run directly:

    python3 benchmarks/bench_backends.py [--n 2000] [--d 25] [--repeats 5]
"""

import argparse
import time

import numpy as np

from qrfselect import _kernels_nb as knb
from qrfselect import _kernels_np as knp


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=25)
    ap.add_argument("--trees", type=int, default=20, help="trees per growth benchmark")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, d = args.n, args.d
    x = np.ascontiguousarray(rng.standard_normal((n, d)))
    y = x[:, 0] + np.exp(0.3 * x[:, 1]) * rng.standard_normal(n)
    levels = np.array([0.25, 0.5, 0.75])
    struct = [np.sort(rng.permutation(n)[: n // 4]).astype(np.int64) for _ in range(args.trees)]
    boots = [np.sort(rng.integers(0, n, n)).astype(np.int64) for _ in range(args.trees)]
    all_rows = np.arange(n, dtype=np.int64)

    # warm the jit once so compilation is not timed
    knb.grow_quantile_tree(x, y, struct[0], levels, d, 1, 7)
    knb.grow_mean_tree(x, y, boots[0], max(1, d // 3), 5, 7)

    rows = []

    def bench(name, nb_fn, np_fn, check=None):
        t_nb, out_nb = timeit(nb_fn, args.repeats)
        t_np, out_np = timeit(np_fn, args.repeats)
        if check is not None:
            check(out_nb, out_np)
        rows.append((name, t_nb, t_np, t_np / t_nb))

    def check_trees(a_list, b_list):
        for a, b in zip(a_list, b_list):
            for u, v in zip(a, b):
                assert np.array_equal(u, v), "backend tree structures diverged"

    bench(
        f"grow_quantile_tree x{args.trees}",
        lambda: [knb.grow_quantile_tree(x, y, s, levels, d, 1, 7) for s in struct],
        lambda: [knp.grow_quantile_tree(x, y, s, levels, d, 1, 7) for s in struct],
        check=check_trees,
    )
    bench(
        f"grow_mean_tree x{args.trees}",
        lambda: [knb.grow_mean_tree(x, y, b, max(1, d // 3), 5, 7) for b in boots],
        lambda: [knp.grow_mean_tree(x, y, b, max(1, d // 3), 5, 7) for b in boots],
        check=check_trees,
    )

    feat, thr, left, right = knb.grow_quantile_tree(x, y, struct[0], levels, d, 1, 7)
    bench(
        f"route_rows ({n} rows x100)",
        lambda: [knb.route_rows(feat, thr, left, right, 0, x, all_rows) for _ in range(100)],
        lambda: [knp.route_rows(feat, thr, left, right, 0, x, all_rows) for _ in range(100)],
    )

    # assemble a small forest for the OOB risk kernel
    n_trees = 60
    feats, thrs, lefts, rights, starts, counts, members = [], [], [], [], [], [], []
    leaf_of = np.empty((n_trees, n), np.int32)
    inbag = np.zeros((n_trees, n), np.uint8)
    off = 0
    mem_off = 0
    for b in range(n_trees):
        sub = np.random.default_rng(b).permutation(n)[: n // 2]
        st = np.sort(sub[: n // 4]).astype(np.int64)
        est = np.sort(sub[n // 4 :]).astype(np.int64)
        f_, t_, l_, r_ = knb.grow_quantile_tree(x, y, st, levels, d, 1, b + 1)
        leaves = knb.route_rows(f_, t_, l_, r_, 0, x, all_rows)
        cnt = np.bincount(leaves[est], minlength=f_.shape[0]).astype(np.int64)
        sta = np.concatenate(([0], np.cumsum(cnt)[:-1])) + mem_off
        order = np.argsort(leaves[est], kind="stable")
        feats.append(f_)
        thrs.append(t_)
        lefts.append(np.where(l_ >= 0, l_ + off, -1).astype(np.int32))
        rights.append(np.where(r_ >= 0, r_ + off, -1).astype(np.int32))
        starts.append(sta)
        counts.append(cnt)
        members.append(est[order])
        leaf_of[b] = leaves + off
        inbag[b, sub] = 1
        off += f_.shape[0]
        mem_off += est.shape[0]
    forest = (
        y,
        np.argsort(y, kind="stable").astype(np.int64),
        np.arange(1, 51) / 51.0,
        leaf_of,
        inbag,
        np.concatenate(starts),
        np.concatenate(counts),
        np.concatenate(members),
    )
    bench(
        f"oob_crps_per_obs ({n} obs, {n_trees} trees)",
        lambda: knb.oob_crps_per_obs(*forest),
        lambda: knp.oob_crps_per_obs(*forest),
    )

    print(f"\nworkload: n={n}, d={d}; best of {args.repeats} runs")
    print(f"{'kernel':42s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, t_nb, t_np, speedup in rows:
        print(f"{name:42s} {t_nb * 1e3:9.1f}ms {t_np * 1e3:9.1f}ms {speedup:7.1f}x")


if __name__ == "__main__":
    main()
