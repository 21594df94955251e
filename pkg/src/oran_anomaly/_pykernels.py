"""Pure numpy implementation of the hot loops.

Mirrors ``_ckernels.pyx`` function for function. Tree traversal and split
search produce bit-identical results across the two; the SMO solver agrees
to rounding (libm and numpy ``exp`` may differ in the last ulp).
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def forest_sum(feature, threshold, left, right, value, roots, X):
    """Sum over trees of the leaf value each row of ``X`` lands in.

    Trees are stored flat; ``roots[t]`` is tree ``t``'s root node. A node with
    ``feature < 0`` is a leaf. Rows with ``x[f] <= threshold`` go left.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        while True:
            f = feature[node]
            active = f >= 0
            if not active.any():
                break
            a_node = node[active]
            go_left = X[rows[active], f[active]] <= threshold[a_node]
            node[active] = np.where(go_left, left[a_node], right[a_node])
        out += value[node]
    return out


def best_split(X, y, idx, features, n_min_features, min_samples_leaf):
    """Gini-optimal axis-aligned split of the samples ``idx``.

    Features are tried in the given order; the search stops once at least
    ``n_min_features`` have been examined and a valid split exists. The score
    minimised is ``n_L * gini_L + n_R * gini_R``. Ties keep the earliest
    feature and the smallest threshold. Returns ``(feature, threshold, score)``
    with feature ``-1`` when no valid split exists.
    """
    yy_all = y[idx].astype(np.float64)
    n = idx.shape[0]
    best_f, best_thr, best_score = -1, 0.0, np.inf
    if n < 2:
        return best_f, best_thr, best_score
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    total1 = yy_all.sum()
    msl = min_samples_leaf
    for count, f in enumerate(features, start=1):
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        cl1 = np.cumsum(yy_all[order])[:-1]
        cl0 = nl - cl1
        cr1 = total1 - cl1
        cr0 = nr - cr1
        valid = v[:-1] < v[1:]
        if msl > 1:
            valid[: msl - 1] = False
            valid[n - msl:] = False
        if valid.any():
            score = 2.0 * cl0 * cl1 / nl + 2.0 * cr0 * cr1 / nr
            score = np.where(valid, score, np.inf)
            k = int(np.argmin(score))
            if score[k] < best_score:
                best_score = float(score[k])
                best_f = int(f)
                thr = (v[k] + v[k + 1]) / 2.0
                if thr == v[k + 1]:
                    thr = v[k]
                best_thr = float(thr)
        if count >= n_min_features and best_f >= 0:
            break
    return best_f, best_thr, best_score


def grow_decision_tree(X, y, rows, rng, n_try, min_samples_split, min_samples_leaf, max_depth):
    """Grow one Gini tree on the (bootstrap) sample ``rows``, depth first.

    ``rng.permutation(d)`` is drawn once per splittable node, left subtree
    first; the compiled builder consumes the generator in the same order.
    """
    d = X.shape[1]
    feature, threshold, left, right, value, n_samples, depths, counts = [], [], [], [], [], [], [], []

    def add(n, depth):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        n_samples.append(n)
        depths.append(depth)
        counts.append((0, 0))
        return len(feature) - 1

    rows = np.asarray(rows, dtype=np.int64)
    add(rows.shape[0], 0)
    stack = [(0, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = idx.shape[0]
        n1 = int(y[idx].sum())
        counts[node] = (n - n1, n1)
        f = -1
        if (0 < n1 < n and n >= min_samples_split and n >= 2 * min_samples_leaf
                and (max_depth is None or depth < max_depth)):
            f, thr, _ = best_split(X, y, idx, rng.permutation(d), n_try, min_samples_leaf)
        if f < 0:
            value[node] = 1.0 if n1 > n - n1 else 0.0  # even leaves vote normal
            continue
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        li, ri = idx[go_left], idx[~go_left]
        left[node] = add(li.shape[0], depth + 1)
        right[node] = add(ri.shape[0], depth + 1)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return {
        "feature": np.array(feature, dtype=np.int32), "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int32), "right": np.array(right, dtype=np.int32),
        "value": np.array(value, dtype=np.float64), "n_samples": np.array(n_samples, dtype=np.int64),
        "depth": np.array(depths, dtype=np.int32),
        "class_counts": np.array(counts, dtype=np.int64).reshape(-1, 2),
    }


def rbf_row(Z, i, gamma):
    d = Z - Z[i]
    return np.exp(-gamma * np.einsum("ij,ij->i", d, d))


def ocsvm_smo(Z, gamma, C, alpha, tol, max_iter, cache_rows=2048):
    """Solve min 1/2 a'Ka s.t. 0 <= a <= C, sum(a) = const by pairwise updates.

    ``alpha`` is a feasible starting point and is updated in place. Uses the
    maximal-violating ``i`` with second-order selection of ``j``. Returns
    ``(gradient, iterations, gap)``; ``gap`` is the final KKT violation
    ``max_{a<C}(-G) - min_{a>0}(-G)``.
    """
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    n = Z.shape[0]
    cache: dict[int, np.ndarray] = {}

    def row(i):
        r = cache.get(i)
        if r is None:
            if len(cache) >= cache_rows:
                cache.pop(next(iter(cache)))
            r = rbf_row(Z, i, gamma)
            cache[i] = r
        return r

    G = np.zeros(n)
    for s in np.flatnonzero(alpha > 0):
        G += alpha[s] * row(s)
    it = 0
    gap = np.inf
    while it < max_iter:
        up = alpha < C
        low = alpha > 0
        neg_g = -G
        i = int(np.argmax(np.where(up, neg_g, -np.inf)))
        g_max = neg_g[i]
        g_min = float(np.min(np.where(low, neg_g, np.inf)))
        gap = g_max - g_min
        if gap < tol:
            break
        Ki = row(i)
        b = g_max - neg_g  # > 0 for violating j
        a = np.maximum(Ki[i] + 1.0 - 2.0 * Ki, 1e-12)  # K_jj = 1 for RBF
        obj = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        Kj = row(j)
        quad = max(Ki[i] + Kj[j] - 2.0 * Ki[j], 1e-12)
        delta = (G[j] - G[i]) / quad
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta >= room_i and room_i <= room_j:
            delta = room_i
            alpha[i] = C
            alpha[j] -= delta
        elif delta >= room_j:
            delta = room_j
            alpha[i] += delta
            alpha[j] = 0.0
        else:
            alpha[i] += delta
            alpha[j] -= delta
        G += delta * (Ki - Kj)
        it += 1
    return G, it, float(gap)
