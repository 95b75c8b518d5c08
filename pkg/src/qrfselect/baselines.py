"""Comparison methods: backward elimination by permutation importance under
squared error (backMSE), and Gaussian regression with a log-linear scale
selected by BIC stepwise search (NGR).

The backMSE forest is a standard regression forest: bootstrap samples of
size n, variance-reduction splits on the raw responses, leaf means. Variable
relevance is the out-of-bag permutation importance, averaged over replicate
forests; the path drops the least important covariate each round and the
reported set minimizes the averaged out-of-bag MSE along the path.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .data import Dataset, IndexSet, mix64, parallel_map

_PERM_STREAM = 0x7065726D
_BOOT_STREAM = 0x626F6F74


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class MeanForestParams:
    """Standard regression-forest parameters (bootstrap, leaf means)."""

    trees: int = 2000
    mtry: Optional[int] = None  # None -> ceil(d/3)
    min_leaf_size: int = 5

    def __post_init__(self):
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")


@dataclass(frozen=True)
class MeanForest:
    """A fitted regression forest over a fixed covariate subset."""

    params: MeanForestParams
    covariates: IndexSet
    seed: int
    n: int
    xcols: np.ndarray
    y: np.ndarray
    tree_offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_of: np.ndarray
    inbag_count: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.tree_offsets.shape[0] - 1

    def oob_rows(self, b: int) -> np.ndarray:
        return np.flatnonzero(self.inbag_count[b] == 0).astype(np.int64)


def fit_mean_forest(
    dataset: Dataset, covariates: IndexSet, params: MeanForestParams, seed: int
) -> MeanForest:
    """Fit a bootstrap regression forest on the given covariate columns."""
    if len(covariates) == 0:
        raise BaselineError("covariate set must be nonempty")
    covariates.validate_for(dataset.d)
    n = dataset.n
    xcols = np.ascontiguousarray(dataset.x[:, covariates.indices])
    d_fit = xcols.shape[1]
    mtry = int(math.ceil(d_fit / 3)) if params.mtry is None else min(params.mtry, d_fit)
    all_rows = np.arange(n, dtype=np.int64)

    feats, thrs, lefts, rights, values = [], [], [], [], []
    tree_off = np.zeros(params.trees + 1, np.int64)
    leaf_of = np.empty((params.trees, n), np.int32)
    inbag_count = np.zeros((params.trees, n), np.int32)
    for b in range(params.trees):
        tree_seed = mix64(seed, _BOOT_STREAM, b)
        rng = np.random.default_rng(tree_seed)
        boot = np.sort(rng.integers(0, n, size=n)).astype(np.int64)
        inbag_count[b] = np.bincount(boot, minlength=n)
        lcg = tree_seed % 2147483646 + 1
        feat, thr, left, right, value = kernels.grow_mean_tree(
            xcols, dataset.y, boot, mtry, params.min_leaf_size, lcg
        )
        off = tree_off[b]
        tree_off[b + 1] = off + feat.shape[0]
        leaf_of[b] = kernels.route_rows(feat, thr, left, right, 0, xcols, all_rows) + off
        feats.append(feat)
        thrs.append(thr)
        lefts.append(np.where(left >= 0, left + off, -1).astype(np.int32))
        rights.append(np.where(right >= 0, right + off, -1).astype(np.int32))
        values.append(value)

    return MeanForest(
        params=params,
        covariates=covariates,
        seed=int(seed),
        n=n,
        xcols=xcols,
        y=dataset.y,
        tree_offsets=tree_off,
        feature=np.concatenate(feats),
        threshold=np.concatenate(thrs),
        left=np.concatenate(lefts),
        right=np.concatenate(rights),
        value=np.concatenate(values),
        leaf_of=leaf_of,
        inbag_count=inbag_count,
    )


def predict_mean(forest: MeanForest, x) -> np.ndarray:
    """Forest prediction (average of per-tree leaf means) at query points."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != len(forest.covariates):
        raise BaselineError("query dimension does not match the forest")
    rows = np.arange(x.shape[0], dtype=np.int64)
    acc = np.zeros(x.shape[0], np.float64)
    for b in range(forest.n_trees):
        leaves = kernels.route_rows(
            forest.feature, forest.threshold, forest.left, forest.right,
            int(forest.tree_offsets[b]), x, rows,
        )
        acc += forest.value[leaves]
    return acc / forest.n_trees


def oob_mse(forest: MeanForest) -> float:
    """Out-of-bag MSE: each row predicted by trees whose bootstrap missed it."""
    preds = forest.value[forest.leaf_of]
    oob = forest.inbag_count == 0
    cnt = oob.sum(axis=0)
    usable = cnt > 0
    if not usable.any():
        raise BaselineError("no out-of-bag prediction available; too few trees")
    mean_pred = (preds * oob).sum(axis=0)[usable] / cnt[usable]
    err = forest.y[usable] - mean_pred
    return float(np.mean(err * err))


def permutation_importance(
    forest: MeanForest,
    dataset: Dataset,
    j: int,
    permutation_fn: Optional[Callable] = None,
) -> float:
    """Out-of-bag permutation importance of dataset covariate ``j``.

    Per tree: MSE on its out-of-bag rows with column j freshly permuted minus
    the unpermuted out-of-bag MSE; averaged over trees. ``permutation_fn``
    (rng, size) -> permutation overrides the default uniform draw (the
    identity permutation yields exactly zero).
    """
    if j not in forest.covariates:
        raise BaselineError(f"covariate {j} is not part of this forest")
    j_local = forest.covariates.indices.index(j)
    diffs = []
    for b in range(forest.n_trees):
        rows = forest.oob_rows(b)
        if rows.size == 0:
            continue
        root = int(forest.tree_offsets[b])
        base_vals = forest.xcols[rows, j_local]
        mse_base = kernels.tree_oob_mse_override(
            forest.feature, forest.threshold, forest.left, forest.right, root,
            forest.value, forest.xcols, forest.y, rows, j_local, base_vals,
        )
        rng = np.random.default_rng(mix64(forest.seed, _PERM_STREAM, j, b))
        if permutation_fn is None:
            perm = rng.permutation(rows.size)
        else:
            perm = np.asarray(permutation_fn(rng, rows.size))
        mse_perm = kernels.tree_oob_mse_override(
            forest.feature, forest.threshold, forest.left, forest.right, root,
            forest.value, forest.xcols, forest.y, rows, j_local, base_vals[perm],
        )
        diffs.append(mse_perm - mse_base)
    if not diffs:
        raise BaselineError("no tree had out-of-bag rows")
    return float(np.mean(diffs))


@dataclass(frozen=True)
class ImportanceScores:
    scores: dict
    n_replicates: int


@dataclass(frozen=True)
class BackwardStep:
    covariates: IndexSet
    oob_mse: float
    importances: dict
    dropped: Optional[int]


@dataclass(frozen=True)
class BackwardSelection:
    selected: IndexSet
    path: tuple
    trivial_mse: float
    seed: int

    def to_dict(self, names=None) -> dict:
        def label(i):
            return names[i] if names is not None else i

        return {
            "schema_version": 1,
            "method": "backmse",
            "selected": [label(i) for i in sorted(self.selected.indices)],
            "selected_indices": sorted(self.selected.indices),
            "seed": self.seed,
            "trivial_mse": self.trivial_mse,
            "path": [
                {
                    "covariates": [label(i) for i in sorted(s.covariates.indices)],
                    "oob_mse": s.oob_mse,
                    "importances": {str(label(q)): s.importances[q] for q in sorted(s.importances)},
                    "dropped": label(s.dropped) if s.dropped is not None else None,
                }
                for s in self.path
            ],
        }


def _loo_mean_mse(y: np.ndarray) -> float:
    n = y.shape[0]
    if n < 2:
        return float("inf")
    total = y.sum()
    loo = (total - y) / (n - 1)
    err = y - loo
    return float(np.mean(err * err))


def backward_select_mse(
    dataset: Dataset,
    params: MeanForestParams = MeanForestParams(),
    n_replicates: int = 20,
    seed: int = 0,
    threads: int = 1,
) -> BackwardSelection:
    """Backward elimination by averaged permutation importance.

    Starting from every covariate, each round fits ``n_replicates`` forests,
    averages the per-covariate importances and the out-of-bag MSE, then drops
    the least important covariate. The reported set minimizes the averaged
    out-of-bag MSE along the path; the grand-mean model (leave-one-out MSE)
    serves as the empty-set endpoint so selecting nothing is representable.
    """
    current = dataset.all_covariates()
    path = []
    round_no = 0
    while len(current) >= 1:
        def run_replicate(r):
            f = fit_mean_forest(
                dataset, current, params, mix64(seed, round_no, r)
            )
            imps = {j: permutation_importance(f, dataset, j) for j in current}
            return oob_mse(f), imps

        results = parallel_map(run_replicate, range(n_replicates), threads)
        mean_mse = float(np.mean([m for m, _ in results]))
        mean_imp = {
            j: float(np.mean([imps[j] for _, imps in results])) for j in current
        }
        dropped = None
        if len(current) > 1:
            dropped = min(sorted(mean_imp), key=lambda q: mean_imp[q])
        path.append(
            BackwardStep(
                covariates=current, oob_mse=mean_mse, importances=mean_imp, dropped=dropped
            )
        )
        if dropped is None:
            break
        current = IndexSet(tuple(i for i in current.indices if i != dropped))
        round_no += 1

    trivial = _loo_mean_mse(dataset.y)
    best_step = min(path, key=lambda s: s.oob_mse)
    if trivial <= best_step.oob_mse:
        selected = IndexSet()
    else:
        selected = best_step.covariates
    return BackwardSelection(
        selected=selected, path=tuple(path), trivial_mse=trivial, seed=int(seed)
    )


# ---------------------------------------------------------------------------
# Gaussian regression with log-linear scale (NGR)
# ---------------------------------------------------------------------------


class NgrError(ValueError):
    pass


class NgrRankError(NgrError):
    pass


class NgrConvergenceError(NgrError):
    pass


@dataclass(frozen=True)
class NgrModel:
    """Maximum-likelihood fit of Y | x ~ N(x'beta, exp(x'gamma)^2).

    ``beta``/``gamma`` include the intercept first, then the selected
    covariates in sorted order.
    """

    selected: IndexSet
    beta: np.ndarray
    gamma: np.ndarray
    loglik: float
    bic: float
    n_obs: int
    n_iter: int
    grad_norm: float

    def design(self, x: np.ndarray) -> np.ndarray:
        cols = sorted(self.selected.indices)
        return np.column_stack([np.ones(x.shape[0]), x[:, cols]]) if cols else np.ones(
            (x.shape[0], 1)
        )

    def predict_params(self, x: np.ndarray):
        dm = self.design(np.asarray(x, dtype=np.float64))
        mu = dm @ self.beta
        sigma = np.exp(dm @ self.gamma)
        return mu, sigma

    def standard_errors(self):
        """(se_beta, se_gamma) from the inverse observed information."""
        return self._se

    _se: tuple = None


def _ngr_loglik_grad_hess(dm, y, beta, gamma, want_hess=True):
    g = dm @ gamma
    r = y - dm @ beta
    inv_var = np.exp(-2.0 * g)
    r2w = r * r * inv_var
    ll = float(-0.5 * y.shape[0] * math.log(2.0 * math.pi) - g.sum() - 0.5 * r2w.sum())
    grad_b = dm.T @ (r * inv_var)
    grad_g = dm.T @ (r2w - 1.0)
    grad = np.concatenate([grad_b, grad_g])
    if not want_hess:
        return ll, grad, None
    p = dm.shape[1]
    hbb = -(dm.T * inv_var) @ dm
    hgg = -2.0 * (dm.T * r2w) @ dm
    hbg = -2.0 * (dm.T * (r * inv_var)) @ dm
    hess = np.block([[hbb, hbg], [hbg.T, hgg]])
    return ll, grad, hess


def ngr_fit(dataset: Dataset, covariates: IndexSet, tol: float = 1e-8, max_iter: int = 500) -> NgrModel:
    """Fit the Gaussian location/log-scale model by damped Newton ascent.

    Initialized at the least-squares solution; every accepted step increases
    the log-likelihood (Armijo backtracking, Fisher-scoring fallback when the
    observed Hessian is unusable). Stops when the gradient 2-norm drops to
    ``tol``; raises after ``max_iter`` iterations without convergence.
    """
    covariates.validate_for(dataset.d)
    cols = sorted(covariates.indices)
    dm = (
        np.column_stack([np.ones(dataset.n), dataset.x[:, cols]])
        if cols
        else np.ones((dataset.n, 1))
    )
    p = dm.shape[1]
    if np.linalg.matrix_rank(dm) < p:
        raise NgrRankError(f"design with covariates {cols} is rank deficient")

    beta, *_ = np.linalg.lstsq(dm, dataset.y, rcond=None)
    resid = dataset.y - dm @ beta
    scale = max(float(np.std(resid)), 1e-8)
    gamma = np.zeros(p)
    gamma[0] = math.log(scale)

    theta = np.concatenate([beta, gamma])
    ll, grad, hess = _ngr_loglik_grad_hess(dm, dataset.y, theta[:p], theta[p:])
    n_iter = 0
    while np.linalg.norm(grad) > tol:
        n_iter += 1
        if n_iter > max_iter:
            raise NgrConvergenceError(
                f"no convergence after {max_iter} iterations (|grad| = {np.linalg.norm(grad):.3e})"
            )
        direction = None
        try:
            direction = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            direction = None
        if direction is None or not np.isfinite(direction).all() or grad @ direction <= 0:
            # Fisher scoring: block-diagonal expected information, always PD
            g = dm @ theta[p:]
            inv_var = np.exp(-2.0 * g)
            ibb = (dm.T * inv_var) @ dm
            igg = 2.0 * dm.T @ dm
            try:
                db = np.linalg.solve(ibb, grad[:p])
                dg = np.linalg.solve(igg, grad[p:])
            except np.linalg.LinAlgError:
                raise NgrRankError("information matrix is singular") from None
            direction = np.concatenate([db, dg])
        slope = float(grad @ direction)
        flat = 16.0 * np.spacing(abs(ll)) if ll != 0.0 else 1e-12
        if slope <= flat:
            # predicted gain is below the float resolution of the objective;
            # polish with full steps driven by gradient-norm descent instead
            cand = theta + direction
            ll_new, grad_new, hess_new = _ngr_loglik_grad_hess(
                dm, dataset.y, cand[:p], cand[p:]
            )
            if (
                math.isfinite(ll_new)
                and np.isfinite(grad_new).all()
                and np.linalg.norm(grad_new) < np.linalg.norm(grad)
                and ll_new >= ll - flat
            ):
                theta, ll, grad, hess = cand, ll_new, grad_new, hess_new
                continue
            break  # stalled at the numerical optimum
        step = 1.0
        improved = False
        for _ in range(60):
            cand = theta + step * direction
            ll_new, grad_new, hess_new = _ngr_loglik_grad_hess(
                dm, dataset.y, cand[:p], cand[p:]
            )
            if math.isfinite(ll_new) and ll_new >= ll + 1e-4 * step * slope:
                theta, ll, grad, hess = cand, ll_new, grad_new, hess_new
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    if np.linalg.norm(grad) > tol:
        raise NgrConvergenceError(
            f"stalled at |grad| = {np.linalg.norm(grad):.3e} after {n_iter} iterations"
        )
    n_params = 2 * p
    bic = -2.0 * ll + n_params * math.log(dataset.n)
    try:
        cov = np.linalg.inv(-hess)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, np.inf))
        se_pair = (se[:p], se[p:])
    except np.linalg.LinAlgError:
        se_pair = (np.full(p, np.nan), np.full(p, np.nan))
    model = NgrModel(
        selected=IndexSet(tuple(cols)),
        beta=theta[:p],
        gamma=theta[p:],
        loglik=ll,
        bic=bic,
        n_obs=dataset.n,
        n_iter=n_iter,
        grad_norm=float(np.linalg.norm(grad)),
    )
    object.__setattr__(model, "_se", se_pair)
    return model


def ngr_bic_stepwise(dataset: Dataset, max_rounds: int = 200) -> NgrModel:
    """Forward/backward stepwise BIC search over one joint covariate set.

    Starting from the intercept-only model, each round evaluates adding any
    excluded covariate or removing any included one (mean and scale designs
    share the set) and takes the move with the largest BIC decrease; stops
    when no move decreases BIC.
    """
    current = IndexSet()
    model = ngr_fit(dataset, current)
    for _ in range(max_rounds):
        best_model = None
        for q in range(dataset.d):
            if q in current:
                cand = IndexSet(tuple(i for i in current.indices if i != q))
            else:
                cand = current.add(q)
            try:
                m = ngr_fit(dataset, cand)
            except NgrRankError:
                continue
            if m.bic < model.bic - 1e-9 and (best_model is None or m.bic < best_model.bic):
                best_model = m
        if best_model is None:
            return model
        model = best_model
        current = model.selected
    return model
