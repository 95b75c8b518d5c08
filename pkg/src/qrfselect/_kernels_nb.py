"""Numba ``@njit`` implementations of the hot kernels.

Loop-for-loop mirror of ``_kernels_np``; see that module for the shared
semantics. All kernels release the GIL so candidate forests can be fitted
from a thread pool. Split scores use exact int64 class-count sums followed by
the identical float operations, so tree structures match the numpy backend
bit for bit.
"""

import math

import numpy as np
from numba import njit

MINSTD_MOD = 2147483647
MINSTD_MUL = 48271


@njit(cache=True, nogil=True)
def _sample_features(featbuf, d, mtry, lcg):
    nsel = mtry if mtry < d else d
    for j in range(d):
        featbuf[j] = j
    for j in range(nsel):
        lcg = (lcg * MINSTD_MUL) % MINSTD_MOD
        r = j + lcg % (d - j)
        tmp = featbuf[j]
        featbuf[j] = featbuf[r]
        featbuf[r] = tmp
    sel = np.sort(featbuf[:nsel].copy())
    return sel, lcg


@njit(cache=True, nogil=True)
def grow_quantile_tree(x, y, rows0, levels, mtry, min_node, lcg):
    ms = rows0.shape[0]
    d = x.shape[1]
    n_levels = levels.shape[0]
    n_lab = n_levels + 1
    cap = 2 * ms + 1
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    rows = rows0.copy()
    st_node = np.empty(cap, np.int32)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    featbuf = np.empty(d, np.int64)
    qs = np.empty(n_levels, np.float64)
    c1 = np.zeros(n_lab, np.int64)
    tot = np.zeros(n_lab, np.int64)
    n_nodes = 1
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = ms
    sp = 1
    while sp > 0:
        sp -= 1
        nid = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        m = hi - lo
        if m < 2 * min_node:
            continue
        # node quantiles (left-continuous) from the structure responses
        yn = np.empty(m, np.float64)
        for i in range(m):
            yn[i] = y[rows[lo + i]]
        yn.sort()
        for k in range(n_levels):
            pos = int(math.ceil(levels[k] * m)) - 1
            if pos < 0:
                pos = 0
            if pos > m - 1:
                pos = m - 1
            qs[k] = yn[pos]
        # relabel: count of node quantiles at or above each response
        z = np.empty(m, np.int64)
        allsame = True
        for i in range(m):
            yi = y[rows[lo + i]]
            below = 0
            for k in range(n_levels):
                if qs[k] < yi:
                    below += 1
            z[i] = n_levels - below
            if z[i] != z[0]:
                allsame = False
        if allsame:
            continue
        for k in range(n_lab):
            tot[k] = 0
        for i in range(m):
            tot[z[i]] += 1
        stot2 = 0
        for k in range(n_lab):
            stot2 += tot[k] * tot[k]
        sel, lcg = _sample_features(featbuf, d, mtry, lcg)
        best_e = -1.0
        best_f = -1
        best_t = 0.0
        xv = np.empty(m, np.float64)
        for jj in range(sel.shape[0]):
            f = sel[jj]
            for i in range(m):
                xv[i] = x[rows[lo + i], f]
            order = np.argsort(xv, kind="mergesort")
            for k in range(n_lab):
                c1[k] = 0
            s1 = 0
            t1 = 0
            for p in range(1, m):
                zz = z[order[p - 1]]
                s1 += 2 * c1[zz] + 1
                t1 += tot[zz]
                c1[zz] += 1
                if p < min_node or m - p < min_node:
                    continue
                a = xv[order[p - 1]]
                b = xv[order[p]]
                if a >= b:
                    continue
                s2 = stot2 - 2 * t1 + s1
                e = s1 / p + s2 / (m - p)
                if e > best_e:
                    best_e = e
                    best_f = f
                    best_t = a
        if best_f < 0:
            continue
        # stable partition of the segment by x <= threshold
        tmp = np.empty(m, np.int64)
        nl = 0
        for i in range(m):
            if x[rows[lo + i], best_f] <= best_t:
                tmp[nl] = rows[lo + i]
                nl += 1
        nr = nl
        for i in range(m):
            if x[rows[lo + i], best_f] > best_t:
                tmp[nr] = rows[lo + i]
                nr += 1
        for i in range(m):
            rows[lo + i] = tmp[i]
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[nid] = best_f
        thr[nid] = best_t
        left[nid] = lid
        right[nid] = rid
        st_node[sp] = lid
        st_lo[sp] = lo
        st_hi[sp] = lo + nl
        sp += 1
        st_node[sp] = rid
        st_lo[sp] = lo + nl
        st_hi[sp] = hi
        sp += 1
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def grow_mean_tree(x, y, rows0, mtry, min_leaf, lcg):
    ms = rows0.shape[0]
    d = x.shape[1]
    cap = 2 * ms + 1
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)
    rows = rows0.copy()
    st_node = np.empty(cap, np.int32)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    featbuf = np.empty(d, np.int64)
    n_nodes = 1
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = ms
    sp = 1
    while sp > 0:
        sp -= 1
        nid = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        m = hi - lo
        stot = 0.0
        for i in range(m):
            stot += y[rows[lo + i]]
        value[nid] = stot / m
        if m < 2 * min_leaf:
            continue
        y0 = y[rows[lo]]
        allsame = True
        for i in range(1, m):
            if y[rows[lo + i]] != y0:
                allsame = False
                break
        if allsame:
            continue
        sel, lcg = _sample_features(featbuf, d, mtry, lcg)
        best_e = -np.inf
        best_f = -1
        best_t = 0.0
        xv = np.empty(m, np.float64)
        for jj in range(sel.shape[0]):
            f = sel[jj]
            for i in range(m):
                xv[i] = x[rows[lo + i], f]
            order = np.argsort(xv, kind="mergesort")
            s1 = 0.0
            for p in range(1, m):
                s1 += y[rows[lo + order[p - 1]]]
                if p < min_leaf or m - p < min_leaf:
                    continue
                a = xv[order[p - 1]]
                b = xv[order[p]]
                if a >= b:
                    continue
                s2 = stot - s1
                e = s1 * s1 / p + s2 * s2 / (m - p)
                if e > best_e:
                    best_e = e
                    best_f = f
                    best_t = a
        if best_f < 0:
            continue
        tmp = np.empty(m, np.int64)
        nl = 0
        for i in range(m):
            if x[rows[lo + i], best_f] <= best_t:
                tmp[nl] = rows[lo + i]
                nl += 1
        nr = nl
        for i in range(m):
            if x[rows[lo + i], best_f] > best_t:
                tmp[nr] = rows[lo + i]
                nr += 1
        for i in range(m):
            rows[lo + i] = tmp[i]
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[nid] = best_f
        thr[nid] = best_t
        left[nid] = lid
        right[nid] = rid
        st_node[sp] = lid
        st_lo[sp] = lo
        st_hi[sp] = lo + nl
        sp += 1
        st_node[sp] = rid
        st_lo[sp] = lo + nl
        st_hi[sp] = hi
        sp += 1
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def route_rows(feat, thr, left, right, root, x, rows):
    out = np.empty(rows.shape[0], np.int32)
    for i in range(rows.shape[0]):
        r = rows[i]
        nid = root
        while feat[nid] >= 0:
            if x[r, feat[nid]] <= thr[nid]:
                nid = left[nid]
            else:
                nid = right[nid]
        out[i] = nid
    return out


@njit(cache=True, nogil=True)
def route_rows_override(feat, thr, left, right, root, x, rows, j, vals):
    out = np.empty(rows.shape[0], np.int32)
    for i in range(rows.shape[0]):
        r = rows[i]
        nid = root
        while feat[nid] >= 0:
            f = feat[nid]
            if f == j:
                v = vals[i]
            else:
                v = x[r, f]
            if v <= thr[nid]:
                nid = left[nid]
            else:
                nid = right[nid]
        out[i] = nid
    return out


@njit(cache=True, nogil=True)
def tree_oob_mse_override(feat, thr, left, right, root, value, x, y, rows, j, vals):
    s = 0.0
    for i in range(rows.shape[0]):
        r = rows[i]
        nid = root
        while feat[nid] >= 0:
            f = feat[nid]
            if f == j:
                v = vals[i]
            else:
                v = x[r, f]
            if v <= thr[nid]:
                nid = left[nid]
            else:
                nid = right[nid]
        e = y[r] - value[nid]
        s += e * e
    return s / rows.shape[0]


@njit(cache=True, nogil=True)
def oob_crps_per_obs(y, order, taus, leaf_of, inbag, member_start, member_count, members):
    n = y.shape[0]
    n_trees = leaf_of.shape[0]
    k = taus.shape[0]
    crps = np.zeros(n, np.float64)
    included = np.zeros(n, np.uint8)
    w = np.zeros(n, np.float64)
    touched = np.empty(n, np.int64)
    qhat = np.empty(k, np.float64)
    for i in range(n):
        ntouch = 0
        for b in range(n_trees):
            if inbag[b, i] == 1:
                continue
            leaf = leaf_of[b, i]
            c = member_count[leaf]
            if c == 0:
                continue
            wv = 1.0 / c
            s = member_start[leaf]
            for mm in range(s, s + c):
                rowj = members[mm]
                if w[rowj] == 0.0:
                    touched[ntouch] = rowj
                    ntouch += 1
                w[rowj] += wv
        if ntouch == 0:
            continue
        included[i] = 1
        # total in sorted-support order, matching the numpy backend's cumsum
        total = 0.0
        for oi in range(n):
            total += w[order[oi]]
        inv = 1.0 / total
        ti = 0
        cum = 0.0
        last = 0.0
        for oi in range(n):
            rowj = order[oi]
            wj = w[rowj]
            if wj == 0.0:
                continue
            cum += wj
            last = y[rowj]
            while ti < k and cum * inv >= taus[ti]:
                qhat[ti] = last
                ti += 1
            if ti >= k:
                break
        while ti < k:
            qhat[ti] = last
            ti += 1
        acc = 0.0
        yi = y[i]
        for t in range(k):
            u = yi - qhat[t]
            if u >= 0.0:
                acc += u * taus[t]
            else:
                acc += u * (taus[t] - 1.0)
        crps[i] = 2.0 * acc / k
        for t in range(ntouch):
            w[touched[t]] = 0.0
    return crps, included
