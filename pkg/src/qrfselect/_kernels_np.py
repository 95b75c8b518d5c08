"""Pure-numpy implementations of the hot kernels.

These carry the reference semantics; ``_kernels_nb`` mirrors them with numba
``@njit`` loops. Both backends are engineered to produce bit-identical tree
structures: split scores keep class-count sums in exact int64 arithmetic and
apply the same float operations in the same order, argsorts are stable, and
node ids are allocated in the same traversal order.

Tree layout (shared by both backends): parallel node arrays where
``feature[nid] < 0`` marks a leaf, otherwise ``x[row, feature] <= threshold``
routes to ``left`` and the complement to ``right``. Node 0 is the root.
"""

import math

import numpy as np

MINSTD_MOD = 2147483647
MINSTD_MUL = 48271


def minstd_next(state):
    """Advance the Lehmer (MINSTD) state; fits int64 without overflow."""
    return (state * MINSTD_MUL) % MINSTD_MOD


def sample_features(d, mtry, lcg):
    """Draw ``mtry`` distinct feature indices by partial Fisher-Yates.

    Returns the selection sorted ascending (so split ties resolve toward the
    lowest feature index) together with the advanced generator state.
    """
    nsel = mtry if mtry < d else d
    buf = np.arange(d, dtype=np.int64)
    for j in range(nsel):
        lcg = (lcg * MINSTD_MUL) % MINSTD_MOD
        r = j + lcg % (d - j)
        buf[j], buf[r] = buf[r], buf[j]
    sel = np.sort(buf[:nsel])
    return sel, lcg


def sorted_quantile_index(tau, m):
    """0-based index of the left-continuous empirical tau-quantile."""
    pos = int(math.ceil(tau * m)) - 1
    if pos < 0:
        pos = 0
    if pos > m - 1:
        pos = m - 1
    return pos


def node_quantiles(y_node, levels):
    """Left-continuous empirical quantiles of a node's responses."""
    ys = np.sort(y_node)
    m = ys.shape[0]
    qs = np.empty(levels.shape[0], np.float64)
    for k in range(levels.shape[0]):
        qs[k] = ys[sorted_quantile_index(levels[k], m)]
    return qs


def relabel_classes(y_node, quantiles):
    """Class label per response: how many node quantiles sit at or above it."""
    k = quantiles.shape[0]
    return (k - np.searchsorted(quantiles, y_node, side="left")).astype(np.int64)


def best_split_scan(xcols, rows, z, n_classes, candidates, min_node):
    """Best boundary maximizing the multiclass split score.

    Scores ``sum_k c1k^2 / n1 + sum_k c2k^2 / n2`` over every boundary
    between consecutive distinct values of a candidate feature, requiring
    ``min_node`` rows per child. Ties break toward the lowest feature index,
    then the smallest boundary. Returns (feature, left_value, right_value,
    score) or None; the split sends ``x <= left_value`` left, which keeps
    routing order-determined (invariant under monotone relabelings of the
    covariate).
    """
    m = rows.shape[0]
    tot = np.bincount(z, minlength=n_classes).astype(np.int64)
    stot2 = int(np.sum(tot * tot))
    best = None
    best_e = -1.0
    ps = np.arange(1, m)
    for f in candidates:
        xv = xcols[rows, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        zs = z[order]
        occ = np.empty(m, np.int64)
        for k in range(n_classes):
            kidx = np.flatnonzero(zs == k)
            occ[kidx] = np.arange(kidx.size)
        s1 = np.cumsum(2 * occ + 1)
        t1 = np.cumsum(tot[zs])
        valid = (ps >= min_node) & (m - ps >= min_node) & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        s1p = s1[ps - 1]
        s2p = stot2 - 2 * t1[ps - 1] + s1p
        e = s1p / ps + s2p / (m - ps)
        vidx = np.flatnonzero(valid)
        ii = vidx[np.argmax(e[vidx])]
        if e[ii] > best_e:
            p = int(ps[ii])
            best_e = float(e[ii])
            best = (int(f), float(xs[p - 1]), float(xs[p]), best_e)
    return best


def grow_quantile_tree(x, y, rows0, levels, mtry, min_node, lcg):
    """Grow one quantile tree on the given structure rows.

    Splits use quantile-relabeled class labels recomputed per node; growth
    stops when a node is smaller than ``2 * min_node``, its labels are
    constant, or no admissible boundary exists. Stored thresholds are the
    largest structure value routed left.
    """
    ms = rows0.shape[0]
    d = x.shape[1]
    n_lab = levels.shape[0] + 1
    cap = 2 * ms + 1
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    n_nodes = 1
    stack = [(0, np.asarray(rows0, np.int64).copy())]
    while stack:
        nid, seg = stack.pop()
        m = seg.shape[0]
        if m < 2 * min_node:
            continue
        yseg = y[seg]
        qs = node_quantiles(yseg, levels)
        z = relabel_classes(yseg, qs)
        if np.all(z == z[0]):
            continue
        sel, lcg = sample_features(d, mtry, lcg)
        best = best_split_scan(x, seg, z, n_lab, sel, min_node)
        if best is None:
            continue
        best_f, best_t = best[0], best[1]
        mask = x[seg, best_f] <= best_t
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[nid] = best_f
        thr[nid] = best_t
        left[nid] = lid
        right[nid] = rid
        stack.append((lid, seg[mask]))
        stack.append((rid, seg[~mask]))
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
    )


def grow_mean_tree(x, y, rows0, mtry, min_leaf, lcg):
    """Grow one regression tree (variance-reduction splits, leaf means).

    ``rows0`` may contain duplicates (bootstrap); ``min_leaf`` counts rows
    including duplicates. Every node stores its mean response.
    """
    ms = rows0.shape[0]
    d = x.shape[1]
    cap = 2 * ms + 1
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)
    n_nodes = 1
    stack = [(0, np.asarray(rows0, np.int64).copy())]
    while stack:
        nid, seg = stack.pop()
        m = seg.shape[0]
        yseg = y[seg]
        stot = float(np.cumsum(yseg)[-1])
        value[nid] = stot / m
        if m < 2 * min_leaf:
            continue
        if np.all(yseg == yseg[0]):
            continue
        sel, lcg = sample_features(d, mtry, lcg)
        ps = np.arange(1, m)
        best_e = -np.inf
        best_f = -1
        best_t = 0.0
        for f in sel:
            xv = x[seg, f]
            order = np.argsort(xv, kind="stable")
            xs = xv[order]
            s1 = np.cumsum(yseg[order])
            valid = (ps >= min_leaf) & (m - ps >= min_leaf) & (xs[:-1] < xs[1:])
            if not valid.any():
                continue
            s1p = s1[ps - 1]
            s2p = stot - s1p
            e = s1p * s1p / ps + s2p * s2p / (m - ps)
            vidx = np.flatnonzero(valid)
            ii = vidx[np.argmax(e[vidx])]
            if e[ii] > best_e:
                p = int(ps[ii])
                best_e = float(e[ii])
                best_f = int(f)
                best_t = float(xs[p - 1])
        if best_f < 0:
            continue
        mask = x[seg, best_f] <= best_t
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[nid] = best_f
        thr[nid] = best_t
        left[nid] = lid
        right[nid] = rid
        stack.append((lid, seg[mask]))
        stack.append((rid, seg[~mask]))
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


def route_rows(feat, thr, left, right, root, x, rows):
    """Leaf node id reached by each row, starting from ``root``."""
    nid = np.full(rows.shape[0], root, np.int32)
    active = np.flatnonzero(feat[nid] >= 0)
    while active.size:
        cur = nid[active]
        f = feat[cur]
        v = x[rows[active], f]
        goleft = v <= thr[cur]
        nid[active] = np.where(goleft, left[cur], right[cur]).astype(np.int32)
        active = active[feat[nid[active]] >= 0]
    return nid


def route_rows_override(feat, thr, left, right, root, x, rows, j, vals):
    """Like route_rows but row i sees ``vals[i]`` in place of column ``j``."""
    nid = np.full(rows.shape[0], root, np.int32)
    active = np.flatnonzero(feat[nid] >= 0)
    while active.size:
        cur = nid[active]
        f = feat[cur]
        v = np.where(f == j, vals[active], x[rows[active], f])
        goleft = v <= thr[cur]
        nid[active] = np.where(goleft, left[cur], right[cur]).astype(np.int32)
        active = active[feat[nid[active]] >= 0]
    return nid


def tree_oob_mse_override(feat, thr, left, right, root, value, x, y, rows, j, vals):
    """Mean squared error of one tree on ``rows`` with column ``j`` replaced."""
    leaves = route_rows_override(feat, thr, left, right, root, x, rows, j, vals)
    err = y[rows] - value[leaves]
    return float(np.mean(err * err))


def oob_crps_per_obs(y, order, taus, leaf_of, inbag, member_start, member_count, members):
    """Per-observation CRPS of the weighted out-of-bag sub-forest prediction.

    For each row i the trees whose subsample excludes i contribute uniform
    weights over their leaf's estimation members (empty leaves contribute
    nothing); quantiles at ``taus`` come from the left-continuous inverse of
    the renormalized weighted CDF. Returns ``(crps, included)`` where rows
    with no usable sub-forest are excluded.
    """
    n = y.shape[0]
    n_trees = leaf_of.shape[0]
    k = taus.shape[0]
    w = np.zeros((n, n), np.float64)
    for b in range(n_trees):
        oob = np.flatnonzero(inbag[b] == 0)
        if oob.size == 0:
            continue
        leaves = leaf_of[b, oob]
        cnt = member_count[leaves]
        keep = cnt > 0
        if not keep.any():
            continue
        oobk = oob[keep]
        ck = cnt[keep]
        starts = member_start[leaves[keep]]
        total = int(ck.sum())
        offs = np.repeat(np.cumsum(ck) - ck, ck)
        flat = np.arange(total) - offs + np.repeat(starts, ck)
        np.add.at(w, (np.repeat(oobk, ck), members[flat]), np.repeat(1.0 / ck, ck))
    included = (w > 0).any(axis=1).astype(np.uint8)
    crps = np.zeros(n, np.float64)
    ys = y[order]
    for i in np.flatnonzero(included):
        wrow = w[i, order]
        cum = np.cumsum(wrow)
        cum = cum * (1.0 / cum[-1])
        pos = np.searchsorted(cum, taus, side="left")
        last_pos = np.flatnonzero(wrow > 0)[-1]
        np.minimum(pos, last_pos, out=pos)
        q = ys[pos]
        u = y[i] - q
        s = float(np.sum(np.where(u >= 0.0, u * taus, u * (taus - 1.0))))
        crps[i] = 2.0 * s / k
    return crps, included
