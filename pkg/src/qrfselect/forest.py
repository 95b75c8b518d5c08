"""Honest quantile random forests.

Each tree draws a subsample without replacement, splits it into disjoint
structure and estimation halves, grows its splits on quantile-relabeled class
labels computed from the structure half only, and stores only estimation rows
in its leaves. Forest weights average the per-tree uniform leaf weights;
quantile predictions invert the weighted empirical CDF. Out-of-bag sub-forest
predictions for row i use only trees whose subsample excludes i.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_np import (
    best_split_scan,
    node_quantiles,
    relabel_classes,
)
from .data import Dataset, ForestParams, IndexSet, mix64
from .scoring import QuantileGrid

FOREST_FORMAT_VERSION = 1


class ForestError(ValueError):
    pass


class DegenerateWeightsError(ForestError):
    """Raised when a prediction point receives zero total weight."""


@dataclass(frozen=True)
class Tree:
    """Read-only view of one tree inside a fitted forest.

    Node arrays are forest-global; ``root`` anchors this tree. Leaf members
    are dataset row indices from the estimation half only.
    """

    index: int
    root: int
    node_count: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    member_start: np.ndarray
    member_count: np.ndarray
    members: np.ndarray
    structure_rows: np.ndarray
    estimation_rows: np.ndarray

    def leaf_ids(self) -> np.ndarray:
        span = np.arange(self.root, self.root + self.node_count)
        return span[self.feature[span] < 0]


@dataclass(frozen=True)
class QuantileForest:
    """A fitted honest quantile forest over a fixed covariate subset."""

    params: ForestParams
    covariates: IndexSet
    seed: int
    n: int
    y: np.ndarray
    tree_offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    member_start: np.ndarray
    member_count: np.ndarray
    members: np.ndarray
    struct_offsets: np.ndarray
    struct_rows: np.ndarray
    est_offsets: np.ndarray
    est_rows: np.ndarray
    leaf_of: np.ndarray
    inbag: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.tree_offsets.shape[0] - 1

    def tree(self, b: int) -> Tree:
        lo = int(self.tree_offsets[b])
        hi = int(self.tree_offsets[b + 1])
        return Tree(
            index=b,
            root=lo,
            node_count=hi - lo,
            feature=self.feature,
            threshold=self.threshold,
            left=self.left,
            right=self.right,
            member_start=self.member_start,
            member_count=self.member_count,
            members=self.members,
            structure_rows=self.struct_rows[
                self.struct_offsets[b] : self.struct_offsets[b + 1]
            ],
            estimation_rows=self.est_rows[self.est_offsets[b] : self.est_offsets[b + 1]],
        )

    def subforest_sizes(self) -> np.ndarray:
        """Number of trees for which each row is out of bag."""
        return self.n_trees - self.inbag.sum(axis=0, dtype=np.int64)


def relabel(y_node, split_levels) -> np.ndarray:
    """Quantile-exceedance class labels for a node's responses.

    Each label counts how many node-level quantiles (left-continuous, at the
    given levels) sit at or above the response; labels range over
    ``{0..len(split_levels)}``. Empty nodes and levels outside (0,1) are
    rejected.
    """
    y_node = np.asarray(y_node, dtype=np.float64)
    if y_node.size == 0:
        raise ValueError("empty node")
    levels = np.asarray(sorted(split_levels), dtype=np.float64)
    if levels.size == 0:
        return np.zeros(y_node.shape[0], dtype=np.int64)
    if np.any(levels <= 0) or np.any(levels >= 1):
        raise ValueError("split levels must lie in (0, 1)")
    qs = node_quantiles(y_node, levels)
    return relabel_classes(y_node, qs)


def best_split(x_node, z, candidates, min_node_size: int = 1):
    """Best (feature, threshold) under the multiclass split score, or None.

    ``x_node`` holds the node's structure rows; the reported threshold is
    the midpoint of the winning boundary between consecutive distinct values
    of a candidate feature; both children must keep at least
    ``min_node_size`` rows. None when no admissible split exists or the
    labels are constant. (Fitted trees store the boundary's left value
    instead, keeping routing order-determined; the candidate partitions and
    scores are identical under either parametrization.)
    """
    x_node = np.ascontiguousarray(np.asarray(x_node, dtype=np.float64))
    if x_node.ndim != 2:
        raise ValueError("x_node must be 2-d")
    z = np.asarray(z, dtype=np.int64)
    if np.all(z == z[0]):
        return None
    cand = np.asarray(sorted(candidates), dtype=np.int64)
    rows = np.arange(x_node.shape[0], dtype=np.int64)
    res = best_split_scan(x_node, rows, z, int(z.max()) + 1, cand, min_node_size)
    if res is None:
        return None
    f, a, b, _ = res
    mid = 0.5 * (a + b)
    if mid >= b:
        mid = a
    return f, mid


def fit(dataset: Dataset, covariates: IndexSet, params: ForestParams, seed: int) -> QuantileForest:
    """Fit an honest quantile forest on the given covariate columns.

    Deterministic in (dataset, covariates, params, seed): per-tree seeds come
    from a 64-bit mix of the master seed and the tree index, so results do
    not depend on scheduling.
    """
    if len(covariates) == 0:
        raise ForestError("covariate set must be nonempty")
    covariates.validate_for(dataset.d)
    n = dataset.n
    s = int(math.floor(params.subsample_fraction * n))
    if s < 4:
        raise ForestError(
            f"subsample size {s} too small: need >= 2 structure and 2 estimation rows"
        )
    xcols = np.ascontiguousarray(dataset.x[:, covariates.indices])
    d_fit = xcols.shape[1]
    mtry = d_fit if params.mtry is None else min(params.mtry, d_fit)
    levels = np.asarray(params.split_levels, dtype=np.float64)
    n_struct = s // 2
    all_rows = np.arange(n, dtype=np.int64)

    b_trees = params.trees
    feats, thrs, lefts, rights = [], [], [], []
    mstarts, mcounts, mems = [], [], []
    s_rows, e_rows = [], []
    tree_off = np.zeros(b_trees + 1, np.int64)
    mem_off = 0
    leaf_of = np.empty((b_trees, n), np.int32)
    inbag = np.zeros((b_trees, n), np.uint8)

    for b in range(b_trees):
        tree_seed = mix64(seed, b)
        rng = np.random.default_rng(tree_seed)
        sub = rng.permutation(n)[:s]
        struct = np.sort(sub[:n_struct]).astype(np.int64)
        est = np.sort(sub[n_struct:]).astype(np.int64)
        assert np.intersect1d(struct, est).size == 0
        lcg = tree_seed % 2147483646 + 1
        feat, thr, left, right = kernels.grow_quantile_tree(
            xcols, dataset.y, struct, levels, mtry, params.min_node_size, lcg
        )
        n_nodes = feat.shape[0]
        leaves_all = kernels.route_rows(feat, thr, left, right, 0, xcols, all_rows)
        est_leaves = leaves_all[est]
        counts = np.bincount(est_leaves, minlength=n_nodes).astype(np.int64)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        order = np.argsort(est_leaves, kind="stable")
        members_local = est[order]

        off = tree_off[b]
        tree_off[b + 1] = off + n_nodes
        feats.append(feat)
        thrs.append(thr)
        lefts.append(np.where(left >= 0, left + off, -1).astype(np.int32))
        rights.append(np.where(right >= 0, right + off, -1).astype(np.int32))
        mstarts.append(starts + mem_off)
        mcounts.append(counts)
        mems.append(members_local)
        mem_off += members_local.shape[0]
        s_rows.append(struct)
        e_rows.append(est)
        leaf_of[b] = leaves_all + off
        inbag[b, sub] = 1

    struct_off = np.zeros(b_trees + 1, np.int64)
    est_off = np.zeros(b_trees + 1, np.int64)
    for b in range(b_trees):
        struct_off[b + 1] = struct_off[b] + s_rows[b].shape[0]
        est_off[b + 1] = est_off[b] + e_rows[b].shape[0]

    return QuantileForest(
        params=params,
        covariates=covariates,
        seed=int(seed),
        n=n,
        y=dataset.y,
        tree_offsets=tree_off,
        feature=np.concatenate(feats),
        threshold=np.concatenate(thrs),
        left=np.concatenate(lefts),
        right=np.concatenate(rights),
        member_start=np.concatenate(mstarts),
        member_count=np.concatenate(mcounts),
        members=np.concatenate(mems) if mem_off else np.empty(0, np.int64),
        struct_offsets=struct_off,
        struct_rows=np.concatenate(s_rows),
        est_offsets=est_off,
        est_rows=np.concatenate(e_rows),
        leaf_of=leaf_of,
        inbag=inbag,
    )


def _route_point(forest: QuantileForest, root: int, x_point: np.ndarray) -> int:
    nid = root
    feat = forest.feature
    while feat[nid] >= 0:
        if x_point[feat[nid]] <= forest.threshold[nid]:
            nid = forest.left[nid]
        else:
            nid = forest.right[nid]
    return nid


def weights(forest: QuantileForest, x_point) -> np.ndarray:
    """Forest weights over the training rows for one query point.

    Per tree the estimation members of the leaf containing the point share
    weight 1/count (an empty leaf contributes the zero vector); the forest
    averages over all trees, so the total equals (populated trees)/trees.
    """
    x_point = np.asarray(x_point, dtype=np.float64).ravel()
    if x_point.shape[0] != len(forest.covariates):
        raise ForestError(
            f"query has dimension {x_point.shape[0]}, forest expects {len(forest.covariates)}"
        )
    w = np.zeros(forest.n, np.float64)
    for b in range(forest.n_trees):
        leaf = _route_point(forest, int(forest.tree_offsets[b]), x_point)
        c = int(forest.member_count[leaf])
        if c == 0:
            continue
        st = int(forest.member_start[leaf])
        w[forest.members[st : st + c]] += 1.0 / c
    w /= forest.n_trees
    return w


def weighted_quantile(values, w, tau: float) -> float:
    """Smallest value whose renormalized cumulative weight reaches tau.

    This is a minimizer of the weighted pinball objective; ties resolve
    toward the smaller value.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must be in (0, 1)")
    values = np.asarray(values, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if values.shape != w.shape:
        raise ValueError("values and weights must have the same shape")
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("weights must have positive sum")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(w[order])
    cum = cum / cum[-1]
    pos = int(np.searchsorted(cum, tau, side="left"))
    return float(values[order][min(pos, values.size - 1)])


def predict_quantiles(forest: QuantileForest, x_point, grid: QuantileGrid) -> np.ndarray:
    """Quantile predictions at every grid level; nondecreasing in the level."""
    w = weights(forest, x_point)
    if not w.sum() > 0:
        raise DegenerateWeightsError("query point received zero weight in every tree")
    return _weighted_quantiles_vector(forest.y, w, grid.levels)


def _weighted_quantiles_vector(values, w, taus) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(w[order])
    cum = cum / cum[-1]
    pos = np.searchsorted(cum, taus, side="left")
    np.minimum(pos, values.size - 1, out=pos)
    return values[order][pos]


def oob_weights(forest: QuantileForest, i: int):
    """Sub-forest weights for row i, or None without a usable sub-forest.

    Uses only trees whose subsample excludes i; returns None when no such
    tree exists or every such tree's leaf at row i is empty.
    """
    if not (0 <= i < forest.n):
        raise ForestError(f"row index {i} out of range")
    oob_trees = np.flatnonzero(forest.inbag[:, i] == 0)
    if oob_trees.size == 0:
        return None
    w = np.zeros(forest.n, np.float64)
    populated = 0
    for b in oob_trees:
        leaf = int(forest.leaf_of[b, i])
        c = int(forest.member_count[leaf])
        if c == 0:
            continue
        st = int(forest.member_start[leaf])
        w[forest.members[st : st + c]] += 1.0 / c
        populated += 1
    if populated == 0:
        return None
    w /= oob_trees.size
    return w


def oob_predict_quantiles(forest: QuantileForest, i: int, grid: QuantileGrid):
    """Sub-forest quantile prediction for row i, or None when unavailable."""
    w = oob_weights(forest, i)
    if w is None:
        return None
    return _weighted_quantiles_vector(forest.y, w, grid.levels)


def oob_crps_all(forest: QuantileForest, grid: QuantileGrid):
    """Per-row CRPS of sub-forest predictions plus an inclusion mask.

    Rows without a usable sub-forest are excluded from the mask. Hot path
    for risk estimation; runs on the active kernel backend.
    """
    order = np.argsort(forest.y, kind="stable").astype(np.int64)
    crps, included = kernels.oob_crps_per_obs(
        forest.y,
        order,
        grid.levels,
        forest.leaf_of,
        forest.inbag,
        forest.member_start,
        forest.member_count,
        forest.members,
    )
    return crps, included.astype(bool)


def validate_forest(forest: QuantileForest, dataset: Dataset = None) -> None:
    """Assert the honesty and bookkeeping invariants of a fitted forest.

    Checks per tree: structure/estimation disjointness with sizes differing
    by at most one, leaf members drawn from the estimation half only and
    covering it exactly once, split features within range, and subsample
    bookkeeping consistent with the inbag matrix.
    """
    d_fit = len(forest.covariates)
    for b in range(forest.n_trees):
        struct = forest.struct_rows[forest.struct_offsets[b] : forest.struct_offsets[b + 1]]
        est = forest.est_rows[forest.est_offsets[b] : forest.est_offsets[b + 1]]
        if np.intersect1d(struct, est).size:
            raise AssertionError(f"tree {b}: structure and estimation rows overlap")
        if abs(struct.size - est.size) > 1:
            raise AssertionError(f"tree {b}: halves differ by more than one row")
        sub = np.flatnonzero(forest.inbag[b] == 1)
        union = np.sort(np.concatenate([struct, est]))
        if not np.array_equal(sub, union):
            raise AssertionError(f"tree {b}: inbag does not match the subsample")
        lo, hi = int(forest.tree_offsets[b]), int(forest.tree_offsets[b + 1])
        feat = forest.feature[lo:hi]
        internal = feat >= 0
        if internal.any() and int(feat[internal].max()) >= d_fit:
            raise AssertionError(f"tree {b}: split feature out of range")
        counts = forest.member_count[lo:hi]
        if int(counts[internal].sum()) != 0:
            raise AssertionError(f"tree {b}: internal nodes must not hold members")
        mem = forest.members[forest.est_offsets[b] : forest.est_offsets[b + 1]]
        if int(counts.sum()) != est.size or not np.array_equal(np.sort(mem), est):
            raise AssertionError(f"tree {b}: leaf members must partition the estimation half")
    if dataset is not None and forest.n != dataset.n:
        raise AssertionError("forest row count does not match dataset")


def save_forest(forest: QuantileForest, path) -> None:
    """Serialize to a self-describing .npz (versioned header + node arrays)."""
    header = {
        "format_version": FOREST_FORMAT_VERSION,
        "seed": forest.seed,
        "n": forest.n,
        "covariates": list(forest.covariates.indices),
        "params": {
            "trees": forest.params.trees,
            "subsample_fraction": forest.params.subsample_fraction,
            "mtry": forest.params.mtry,
            "min_node_size": forest.params.min_node_size,
            "split_levels": list(forest.params.split_levels),
        },
    }
    np.savez_compressed(
        path,
        header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
        y=forest.y,
        tree_offsets=forest.tree_offsets,
        feature=forest.feature,
        threshold=forest.threshold,
        left=forest.left,
        right=forest.right,
        member_start=forest.member_start,
        member_count=forest.member_count,
        members=forest.members,
        struct_offsets=forest.struct_offsets,
        struct_rows=forest.struct_rows,
        est_offsets=forest.est_offsets,
        est_rows=forest.est_rows,
        leaf_of=forest.leaf_of,
        inbag=forest.inbag,
    )


def load_forest(path) -> QuantileForest:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header["format_version"] != FOREST_FORMAT_VERSION:
            raise ForestError(f"unsupported forest format {header['format_version']}")
        params = ForestParams(
            trees=header["params"]["trees"],
            subsample_fraction=header["params"]["subsample_fraction"],
            mtry=header["params"]["mtry"],
            min_node_size=header["params"]["min_node_size"],
            split_levels=tuple(header["params"]["split_levels"]),
        )
        return QuantileForest(
            params=params,
            covariates=IndexSet(tuple(header["covariates"])),
            seed=header["seed"],
            n=header["n"],
            y=z["y"],
            tree_offsets=z["tree_offsets"],
            feature=z["feature"],
            threshold=z["threshold"],
            left=z["left"],
            right=z["right"],
            member_start=z["member_start"],
            member_count=z["member_count"],
            members=z["members"],
            struct_offsets=z["struct_offsets"],
            struct_rows=z["struct_rows"],
            est_offsets=z["est_offsets"],
            est_rows=z["est_rows"],
            leaf_of=z["leaf_of"],
            inbag=z["inbag"],
        )
