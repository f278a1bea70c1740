"""Benchmark the boosting kernels: compiled path versus pure-numpy path.

Both builds share one arithmetic specification, so this also cross-checks
them: fitted trees and score paths must agree exactly.

Run:  python3 benchmarks/bench_kernels.py [--n 1000] [--trees 1000] ...
"""

import argparse
import time

import numpy as np

from drboost import _kernels
from drboost._accel import USE_NUMBA, accel_mode
from drboost.boost import probability_from_score
from drboost.dgp import Scenario, generate_replicate


def fit_with(tree_kernel, X, t, order, trees, shrinkage, baseline,
             max_depth=3, min_node=10):
    """The stagewise caller loop with a swappable tree kernel."""
    n = X.shape[0]
    max_nodes = (1 << (max_depth + 1)) - 1
    feat = np.full((trees, max_nodes), -1, dtype=np.int64)
    thr = np.zeros((trees, max_nodes))
    left = np.full((trees, max_nodes), -1, dtype=np.int64)
    right = np.full((trees, max_nodes), -1, dtype=np.int64)
    leafval = np.zeros((trees, max_nodes))
    score = np.full(n, baseline)
    for k in range(trees):
        p = probability_from_score(score)
        g = t - p
        h = p * (1.0 - p)
        (feat[k], thr[k], left[k], right[k], leafval[k], _,
         leaf_of) = tree_kernel(X, order, g, h, max_depth, min_node)
        score = score + shrinkage * leafval[k, leaf_of]
    return feat, thr, left, right, leafval, score


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--trees", type=int, default=1000)
    ap.add_argument("--shrinkage", type=float, default=0.01)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=19)
    args = ap.parse_args()

    ds = generate_replicate(
        Scenario(n=args.n, interaction=False, base_seed=args.seed), 0)
    X = np.ascontiguousarray(ds.x)
    t = ds.t.astype(np.float64)
    tbar = t.mean()
    baseline = float(np.log(tbar / (1.0 - tbar)))
    order = np.empty((X.shape[1], X.shape[0]), dtype=np.int64)
    for j in range(X.shape[1]):
        order[j] = np.argsort(X[:, j], kind="stable")

    print(f"n={args.n} trees={args.trees} shrinkage={args.shrinkage} "
          f"depth=3 min_node=10   (package acceleration mode: {accel_mode()})")

    def np_fit():
        return fit_with(_kernels.fit_tree_numpy, X, t, order, args.trees,
                        args.shrinkage, baseline)

    np_model = np_fit()
    t_np_fit = _time(np_fit, args.repeats)
    pred_np = (np_model[0], np_model[1], np_model[2], np_model[3],
               np_model[4], args.trees, baseline, args.shrinkage, X)
    t_np_pred = _time(lambda: _kernels.predict_scores_numpy(*pred_np),
                      args.repeats)
    rows = [("numpy", t_np_fit, t_np_pred)]

    if USE_NUMBA:
        def nb_fit():
            return fit_with(_kernels.fit_tree_numba, X, t, order, args.trees,
                            args.shrinkage, baseline)

        nb_model = nb_fit()  # includes any compile cost
        t_nb_fit = _time(nb_fit, args.repeats)
        pred_nb = (nb_model[0], nb_model[1], nb_model[2], nb_model[3],
                   nb_model[4], args.trees, baseline, args.shrinkage, X)
        _kernels.predict_scores_numba(*pred_nb)
        t_nb_pred = _time(lambda: _kernels.predict_scores_numba(*pred_nb),
                          args.repeats)
        rows.append(("numba", t_nb_fit, t_nb_pred))

        trees_equal = all(
            np.array_equal(a, b) for a, b in zip(np_model[:5], nb_model[:5]))
        score_gap = float(np.max(np.abs(np_model[5] - nb_model[5])))
        pred_gap = float(np.max(np.abs(
            _kernels.predict_scores_numpy(*pred_np)
            - _kernels.predict_scores_numba(*pred_nb))))
        print(f"tree structures identical across paths: {trees_equal}")
        print(f"max |training score difference|: {score_gap:.3e}")
        print(f"max |predicted score difference|: {pred_gap:.3e}")
        if not trees_equal or score_gap != 0.0 or pred_gap != 0.0:
            raise SystemExit("kernel paths disagree")
    else:
        print("numba disabled (DRBOOST_NO_NUMBA) - timing numpy path only")

    print()
    print(f"{'path':8s} {'fit (s)':>10s} {'predict (s)':>12s} "
          f"{'fit speedup':>12s}")
    base_time = rows[0][1]
    for name, tf, tp in rows:
        print(f"{name:8s} {tf:10.4f} {tp:12.5f} {base_time / tf:11.2f}x")


if __name__ == "__main__":
    main()
