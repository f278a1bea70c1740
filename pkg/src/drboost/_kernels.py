"""Boosted-tree fitting and prediction kernels.

Two interchangeable builds of the same algorithm: a loop-style version that
numba compiles (the default), and a vectorized numpy version used when the
env flag DRBOOST_NO_NUMBA is set or numba is unavailable.

The kernels deliberately contain no transcendental math: they fit one tree
to precomputed gradient/curvature vectors, and the caller maps scores to
probabilities between trees through one shared implementation.  Everything
inside the kernels is IEEE add/multiply/divide/compare in a fixed order
(sequential prefix sums, a shared reciprocal table, first-maximum
tie-breaking over (feature, position), row-major leaf accumulation), so the
two builds grow bit-identical trees on identical inputs.

Split thresholds are midpoints between adjacent distinct sorted values,
nudged down to the left value if rounding lands the midpoint on the right
value, so the rule "x <= threshold goes left" reproduces the counted
partition exactly.
"""

import numpy as np

from ._accel import USE_NUMBA


def _fit_tree_loop(X, order, g, h, max_depth, min_node):
    """Grow one least-squares tree on gradient ``g`` with Newton leaves.

    ``order`` holds per-feature stable sort orders of ``X``'s rows.  Returns
    (feature, threshold, left, right, leaf_value, n_nodes, leaf_of): node
    arrays sized to the depth bound, the node count actually created, and
    each row's leaf index.  Leaf values are sum(g in leaf) / sum(h in leaf).
    """
    n = X.shape[0]
    nfeat = X.shape[1]
    max_nodes = (1 << (max_depth + 1)) - 1

    feat = np.full(max_nodes, -1, dtype=np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    leafval = np.zeros(max_nodes)
    leaf_of = np.zeros(n, dtype=np.int64)

    W = order.copy()
    tmp_left = np.empty(n, dtype=np.int64)
    tmp_right = np.empty(n, dtype=np.int64)
    go_left = np.zeros(n, dtype=np.uint8)
    lnum = np.zeros(max_nodes)
    lden = np.zeros(max_nodes)
    ns = np.zeros(max_nodes, dtype=np.int64)
    ne = np.zeros(max_nodes, dtype=np.int64)
    nd = np.zeros(max_nodes, dtype=np.int64)
    inv = np.empty(n + 1)
    inv[0] = 0.0
    for i in range(1, n + 1):
        inv[i] = 1.0 / i

    ns[0] = 0
    ne[0] = n
    nd[0] = 0
    count = 1
    m = 0
    while m < count:
        s0 = ns[m]
        e0 = ne[m]
        c = e0 - s0
        G = 0.0
        for i in range(s0, e0):
            G += g[W[0, i]]
        best_gain = G * G * inv[c]
        best_f = -1
        best_thr = 0.0
        if nd[m] < max_depth and c >= 2 * min_node:
            for f in range(nfeat):
                gl = 0.0
                for i in range(s0, e0 - 1):
                    idx = W[f, i]
                    gl += g[idx]
                    cl = i - s0 + 1
                    cr = c - cl
                    if cl < min_node or cr < min_node:
                        continue
                    xv = X[idx, f]
                    xn = X[W[f, i + 1], f]
                    if xv == xn:
                        continue
                    gr = G - gl
                    gain = gl * gl * inv[cl] + gr * gr * inv[cr]
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        tc = 0.5 * (xv + xn)
                        if tc >= xn:
                            tc = xv
                        best_thr = tc
        if best_f >= 0:
            feat[m] = best_f
            thr[m] = best_thr
            li = count
            ri = count + 1
            left[m] = li
            right[m] = ri
            for i in range(s0, e0):
                idx = W[0, i]
                if X[idx, best_f] <= best_thr:
                    go_left[idx] = 1
                else:
                    go_left[idx] = 0
            nl = 0
            for f in range(nfeat):
                nl = 0
                nr = 0
                for i in range(s0, e0):
                    idx = W[f, i]
                    if go_left[idx] == 1:
                        tmp_left[nl] = idx
                        nl += 1
                    else:
                        tmp_right[nr] = idx
                        nr += 1
                for i in range(nl):
                    W[f, s0 + i] = tmp_left[i]
                for i in range(nr):
                    W[f, s0 + nl + i] = tmp_right[i]
            ns[li] = s0
            ne[li] = s0 + nl
            nd[li] = nd[m] + 1
            ns[ri] = s0 + nl
            ne[ri] = e0
            nd[ri] = nd[m] + 1
            count += 2
        m += 1

    for m2 in range(count):
        if feat[m2] == -1:
            for i in range(ns[m2], ne[m2]):
                leaf_of[W[0, i]] = m2
    for i in range(n):
        m2 = leaf_of[i]
        lnum[m2] += g[i]
        lden[m2] += h[i]
    for m2 in range(count):
        if feat[m2] == -1 and lden[m2] > 0.0:
            leafval[m2] = lnum[m2] / lden[m2]

    return feat, thr, left, right, leafval, count, leaf_of


def _predict_scores_loop(feat, thr, left, right, leafval, n_trees, baseline,
                         shrinkage, Xq):
    nq = Xq.shape[0]
    out = np.empty(nq)
    for i in range(nq):
        s = baseline
        for j in range(n_trees):
            m = 0
            while feat[j, m] != -1:
                if Xq[i, feat[j, m]] <= thr[j, m]:
                    m = left[j, m]
                else:
                    m = right[j, m]
            s = s + shrinkage * leafval[j, m]
        out[i] = s
    return out


def fit_tree_numpy(X, order, g, h, max_depth, min_node):
    """Vectorized twin of the tree kernel; identical outputs by design."""
    n, nfeat = X.shape
    max_nodes = (1 << (max_depth + 1)) - 1

    feat = np.full(max_nodes, -1, dtype=np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    leafval = np.zeros(max_nodes)
    leaf_of = np.zeros(n, dtype=np.int64)

    inv = np.empty(n + 1)
    inv[0] = 0.0
    inv[1:] = 1.0 / np.arange(1, n + 1)

    W = order.copy()
    ns = np.zeros(max_nodes, dtype=np.int64)
    ne = np.zeros(max_nodes, dtype=np.int64)
    nd = np.zeros(max_nodes, dtype=np.int64)
    go = np.zeros(n, dtype=bool)

    ns[0], ne[0], nd[0] = 0, n, 0
    count = 1
    m = 0
    while m < count:
        s0, e0 = ns[m], ne[m]
        c = e0 - s0
        G = np.cumsum(g[W[0, s0:e0]])[-1]
        best_gain = G * G * inv[c]
        best_f = -1
        best_thr = 0.0
        if nd[m] < max_depth and c >= 2 * min_node:
            cl = np.arange(1, c)
            cr = c - cl
            size_ok = (cl >= min_node) & (cr >= min_node)
            for f in range(nfeat):
                seg = W[f, s0:e0]
                xv = X[seg, f]
                pre = np.cumsum(g[seg])
                gl = pre[:-1]
                gr = G - gl
                valid = size_ok & (xv[:-1] != xv[1:])
                gains = np.where(
                    valid, gl * gl * inv[cl] + gr * gr * inv[cr], -np.inf)
                ib = int(np.argmax(gains))
                if gains[ib] > best_gain:
                    best_gain = gains[ib]
                    best_f = f
                    tc = 0.5 * (xv[ib] + xv[ib + 1])
                    if tc >= xv[ib + 1]:
                        tc = xv[ib]
                    best_thr = tc
        if best_f >= 0:
            feat[m] = best_f
            thr[m] = best_thr
            li, ri = count, count + 1
            left[m] = li
            right[m] = ri
            rows0 = W[0, s0:e0]
            go[rows0] = X[rows0, best_f] <= best_thr
            nl = 0
            for f in range(nfeat):
                seg = W[f, s0:e0]
                msk = go[seg]
                # materialize both halves before writing: seg views W
                lrows = seg[msk]
                rrows = seg[~msk]
                nl = lrows.shape[0]
                W[f, s0:s0 + nl] = lrows
                W[f, s0 + nl:e0] = rrows
            ns[li], ne[li], nd[li] = s0, s0 + nl, nd[m] + 1
            ns[ri], ne[ri], nd[ri] = s0 + nl, e0, nd[m] + 1
            count += 2
        m += 1

    for m2 in range(count):
        if feat[m2] == -1:
            leaf_of[W[0, ns[m2]:ne[m2]]] = m2
    lnum = np.bincount(leaf_of, weights=g, minlength=max_nodes)
    lden = np.bincount(leaf_of, weights=h, minlength=max_nodes)
    for m2 in range(count):
        if feat[m2] == -1 and lden[m2] > 0.0:
            leafval[m2] = lnum[m2] / lden[m2]

    return feat, thr, left, right, leafval, count, leaf_of


def predict_scores_numpy(feat, thr, left, right, leafval, n_trees, baseline,
                         shrinkage, Xq):
    """Vectorized twin of the loop predictor."""
    nq = Xq.shape[0]
    s = np.full(nq, baseline)
    rows = np.arange(nq)
    for j in range(n_trees):
        node = np.zeros(nq, dtype=np.int64)
        active = feat[j, node] != -1
        while np.any(active):
            idx = rows[active]
            cur = node[active]
            f = feat[j, cur]
            go_l = Xq[idx, f] <= thr[j, cur]
            node[active] = np.where(go_l, left[j, cur], right[j, cur])
            active = feat[j, node] != -1
        s = s + shrinkage * leafval[j, node]
    return s


if USE_NUMBA:
    from numba import njit

    fit_tree_numba = njit(cache=True)(_fit_tree_loop)
    predict_scores_numba = njit(cache=True)(_predict_scores_loop)
    fit_tree = fit_tree_numba
    predict_scores = predict_scores_numba
else:  # pragma: no cover - exercised via the env flag
    fit_tree_numba = None
    predict_scores_numba = None
    fit_tree = fit_tree_numpy
    predict_scores = predict_scores_numpy
