# cython: language_level=3
"""Compiled versions of the hot loops in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

NAME = "cython"


def forest_sum(const int[::1] feature, const double[::1] threshold,
               const int[::1] left, const int[::1] right,
               const double[::1] value, const int[::1] roots, X):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], n_trees = roots.shape[0]
    cdef Py_ssize_t i, t, moving
    cdef int node, f, l, r
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    if n == 0:
        return out
    cdef int* nodes = <int*> malloc(n * sizeof(int))
    if nodes == NULL:
        raise MemoryError()
    with nogil:
        # Tree-major keeps one tree's nodes cache-resident. Rows of a tree
        # advance one level at a time, so their load chains overlap instead of
        # running back to back. Per-row summation is still in tree order,
        # matching the numpy fallback exactly.
        for t in range(n_trees):
            for i in range(n):
                nodes[i] = roots[t]
            moving = n
            while moving:
                moving = 0
                for i in range(n):
                    node = nodes[i]
                    f = feature[node]
                    if f >= 0:
                        l = left[node]
                        r = right[node]
                        nodes[i] = l if Xv[i, f] <= threshold[node] else r
                        moving += 1
            for i in range(n):
                o[i] = o[i] + value[nodes[i]]
    free(nodes)
    return out


cdef struct VY:
    double v
    double y


cdef inline void _swap(VY* a, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef VY t = a[i]
    a[i] = a[j]
    a[j] = t


cdef void _sort_vy(VY* a, Py_ssize_t n) noexcept nogil:
    """Quicksort on ``.v`` (median of three, insertion sort below 16)."""
    cdef Py_ssize_t i, j, mid
    cdef double pivot
    cdef VY key
    while n > 16:
        mid = n // 2
        if a[mid].v < a[0].v:
            _swap(a, 0, mid)
        if a[n - 1].v < a[0].v:
            _swap(a, 0, n - 1)
        if a[n - 1].v < a[mid].v:
            _swap(a, mid, n - 1)
        pivot = a[mid].v
        i = 0
        j = n - 1
        while i <= j:
            while a[i].v < pivot:
                i += 1
            while a[j].v > pivot:
                j -= 1
            if i <= j:
                _swap(a, i, j)
                i += 1
                j -= 1
        # recurse into the smaller part, loop on the larger
        if j + 1 < n - i:
            _sort_vy(a, j + 1)
            a = a + i
            n = n - i
        else:
            _sort_vy(a + i, n - i)
            n = j + 1
    for i in range(1, n):
        key = a[i]
        j = i - 1
        while j >= 0 and a[j].v > key.v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = key


cdef int _best_split_range(const double[:, ::1] Xv, const double[::1] yv,
                           const cnp.int64_t* samples, Py_ssize_t n,
                           const cnp.int64_t* feats, Py_ssize_t n_feat,
                           Py_ssize_t n_min_features, Py_ssize_t min_samples_leaf,
                           VY* buf, double* thr_out, double* score_out) noexcept nogil:
    cdef Py_ssize_t fi, k, f, feat_best_k
    cdef int best_f = -1
    cdef double best_thr = 0.0, best_score = INFINITY, feat_best_score
    cdef double total1 = 0.0, cl1, cl0, cr1, cr0, nl, nr, score, thr
    if n >= 2:
        for k in range(n):
            total1 = total1 + yv[samples[k]]
        for fi in range(n_feat):
            f = feats[fi]
            for k in range(n):
                buf[k].v = Xv[samples[k], f]
                buf[k].y = yv[samples[k]]
            _sort_vy(buf, n)
            cl1 = 0.0
            feat_best_score = INFINITY
            feat_best_k = -1
            for k in range(n - 1):
                cl1 = cl1 + buf[k].y
                if not (buf[k].v < buf[k + 1].v):
                    continue
                if k + 1 < min_samples_leaf or n - k - 1 < min_samples_leaf:
                    continue
                nl = <double>(k + 1)
                nr = <double>n - nl
                cl0 = nl - cl1
                cr1 = total1 - cl1
                cr0 = nr - cr1
                score = 2.0 * cl0 * cl1 / nl + 2.0 * cr0 * cr1 / nr
                if score < feat_best_score:
                    feat_best_score = score
                    feat_best_k = k
            if feat_best_k >= 0 and feat_best_score < best_score:
                best_score = feat_best_score
                best_f = <int>f
                k = feat_best_k
                thr = (buf[k].v + buf[k + 1].v) / 2.0
                if thr == buf[k + 1].v:
                    thr = buf[k].v
                best_thr = thr
            if fi + 1 >= n_min_features and best_f >= 0:
                break
    thr_out[0] = best_thr
    score_out[0] = best_score
    return best_f


def best_split(X, y, idx, features, Py_ssize_t n_min_features, Py_ssize_t min_samples_leaf):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const cnp.int64_t[::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const cnp.int64_t[::1] fv = np.ascontiguousarray(features, dtype=np.int64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = iv.shape[0]
    cdef double thr = 0.0, score = INFINITY
    cdef int f = -1
    if n < 2:
        return f, thr, score
    cdef VY* buf = <VY*> malloc(n * sizeof(VY))
    if buf == NULL:
        raise MemoryError()
    with nogil:
        f = _best_split_range(Xv, yv, &iv[0], n, &fv[0], fv.shape[0],
                              n_min_features, min_samples_leaf, buf, &thr, &score)
    free(buf)
    return f, thr, score


def grow_decision_tree(X, y, rows, rng, Py_ssize_t n_try, Py_ssize_t min_samples_split,
                       Py_ssize_t min_samples_leaf, max_depth):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    samples_np = np.array(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] samples = samples_np
    cdef Py_ssize_t n_total = samples.shape[0], d = Xv.shape[1]
    cdef Py_ssize_t depth_cap = -1 if max_depth is None else int(max_depth)
    cdef Py_ssize_t node, start, end, depth, n, k, lo, hi, mid
    cdef cnp.int64_t tmp
    cdef double n1, thr, score
    cdef int f
    cdef const cnp.int64_t[::1] perm
    feature, threshold, left, right, value, n_samples, depths, c0, c1 = [], [], [], [], [], [], [], [], []
    cdef VY* buf = <VY*> malloc(max(n_total, 1) * sizeof(VY))
    if buf == NULL:
        raise MemoryError()
    try:
        feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1)
        value.append(0.0); n_samples.append(n_total); depths.append(0); c0.append(0); c1.append(0)
        stack = [(0, 0, n_total, 0)]
        while stack:
            node, start, end, depth = stack.pop()
            n = end - start
            n1 = 0.0
            for k in range(start, end):
                n1 = n1 + yv[samples[k]]
            c1[node] = <Py_ssize_t>n1
            c0[node] = n - <Py_ssize_t>n1
            f = -1
            if (n1 > 0 and n1 < n and n >= min_samples_split and n >= 2 * min_samples_leaf
                    and (depth_cap < 0 or depth < depth_cap)):
                perm = np.ascontiguousarray(rng.permutation(d), dtype=np.int64)
                with nogil:
                    f = _best_split_range(Xv, yv, &samples[start], n, &perm[0], d,
                                          n_try, min_samples_leaf, buf, &thr, &score)
            if f < 0:
                value[node] = 1.0 if n1 > n - n1 else 0.0
                continue
            lo = start
            hi = end - 1
            with nogil:
                while lo <= hi:
                    if Xv[samples[lo], f] <= thr:
                        lo += 1
                    else:
                        tmp = samples[lo]
                        samples[lo] = samples[hi]
                        samples[hi] = tmp
                        hi -= 1
            mid = lo
            feature[node] = f
            threshold[node] = thr
            for child_n in (mid - start, end - mid):
                feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1)
                value.append(0.0); n_samples.append(child_n); depths.append(depth + 1)
                c0.append(0); c1.append(0)
            left[node] = len(feature) - 2
            right[node] = len(feature) - 1
            stack.append((right[node], mid, end, depth + 1))
            stack.append((left[node], start, mid, depth + 1))
    finally:
        free(buf)
    return {
        "feature": np.array(feature, dtype=np.int32), "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int32), "right": np.array(right, dtype=np.int32),
        "value": np.array(value, dtype=np.float64), "n_samples": np.array(n_samples, dtype=np.int64),
        "depth": np.array(depths, dtype=np.int32),
        "class_counts": np.stack([np.array(c0, dtype=np.int64), np.array(c1, dtype=np.int64)], axis=1),
    }


cdef inline void _rbf_row(const double[:, ::1] Z, Py_ssize_t i, double gamma, double* out) noexcept nogil:
    cdef Py_ssize_t n = Z.shape[0], d = Z.shape[1], s, c
    cdef double acc, diff
    for s in range(n):
        acc = 0.0
        for c in range(d):
            diff = Z[s, c] - Z[i, c]
            acc = acc + diff * diff
        out[s] = exp(-gamma * acc)


def ocsvm_smo(Z, double gamma, double C, double[::1] alpha, double tol,
              Py_ssize_t max_iter, Py_ssize_t cache_rows=2048):
    cdef const double[:, ::1] Zv = np.ascontiguousarray(Z, dtype=np.float64)
    cdef Py_ssize_t n = Zv.shape[0]
    cdef Py_ssize_t m = min(max(cache_rows, 2), n)
    cache_np = np.empty((m, n), dtype=np.float64)
    slot_of_np = np.full(n, -1, dtype=np.int64)
    owner_np = np.full(m, -1, dtype=np.int64)
    G_np = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] cache = cache_np
    cdef cnp.int64_t[::1] slot_of = slot_of_np
    cdef cnp.int64_t[::1] owner = owner_np
    cdef double[::1] G = G_np
    cdef Py_ssize_t next_slot = 0, it = 0, s, t, i, j, si, sj
    cdef double g_max, g_min, b, a, obj, best_obj, quad, delta, room_i, room_j
    cdef double gap = INFINITY
    cdef double* Ki
    cdef double* Kj

    with nogil:
        for s in range(n):
            if alpha[s] > 0:
                si = _cached_row(Zv, s, gamma, cache, slot_of, owner, &next_slot, m, -1)
                Ki = &cache[si, 0]
                for t in range(n):
                    G[t] = G[t] + alpha[s] * Ki[t]
        while it < max_iter:
            i = -1
            g_max = -INFINITY
            g_min = INFINITY
            for t in range(n):
                if alpha[t] < C and -G[t] > g_max:
                    g_max = -G[t]
                    i = t
                if alpha[t] > 0 and -G[t] < g_min:
                    g_min = -G[t]
            gap = g_max - g_min
            if gap < tol:
                break
            si = _cached_row(Zv, i, gamma, cache, slot_of, owner, &next_slot, m, -1)
            Ki = &cache[si, 0]
            j = -1
            best_obj = INFINITY
            for t in range(n):
                if alpha[t] > 0:
                    b = g_max + G[t]
                    if b > 0:
                        a = Ki[i] + 1.0 - 2.0 * Ki[t]
                        if a < 1e-12:
                            a = 1e-12
                        obj = -(b * b) / a
                        if obj < best_obj:
                            best_obj = obj
                            j = t
            sj = _cached_row(Zv, j, gamma, cache, slot_of, owner, &next_slot, m, i)
            # the eviction above never targets row i, so Ki stays valid
            Kj = &cache[sj, 0]
            quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
            if quad < 1e-12:
                quad = 1e-12
            delta = (G[j] - G[i]) / quad
            room_i = C - alpha[i]
            room_j = alpha[j]
            if delta >= room_i and room_i <= room_j:
                delta = room_i
                alpha[i] = C
                alpha[j] = alpha[j] - delta
            elif delta >= room_j:
                delta = room_j
                alpha[i] = alpha[i] + delta
                alpha[j] = 0.0
            else:
                alpha[i] = alpha[i] + delta
                alpha[j] = alpha[j] - delta
            for t in range(n):
                G[t] = G[t] + delta * (Ki[t] - Kj[t])
            it += 1
    return G_np, it, gap


cdef Py_ssize_t _cached_row(const double[:, ::1] Z, Py_ssize_t i, double gamma,
                            double[:, ::1] cache, cnp.int64_t[::1] slot_of,
                            cnp.int64_t[::1] owner, Py_ssize_t* next_slot,
                            Py_ssize_t m, Py_ssize_t pinned) noexcept nogil:
    cdef Py_ssize_t s = slot_of[i]
    if s >= 0:
        return s
    s = next_slot[0]
    if owner[s] == pinned and pinned >= 0:
        s = (s + 1) % m
    next_slot[0] = (s + 1) % m
    if owner[s] >= 0:
        slot_of[owner[s]] = -1
    owner[s] = i
    slot_of[i] = s
    _rbf_row(Z, i, gamma, &cache[s, 0])
    return s
