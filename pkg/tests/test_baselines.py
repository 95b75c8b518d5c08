import math

import numpy as np
import pytest

from qrfselect.baselines import (
    BaselineError,
    MeanForestParams,
    NgrRankError,
    _loo_mean_mse,
    _ngr_loglik_grad_hess,
    backward_select_mse,
    fit_mean_forest,
    ngr_bic_stepwise,
    ngr_fit,
    oob_mse,
    permutation_importance,
    predict_mean,
)
from qrfselect.data import Dataset, IndexSet
from qrfselect.simulation import SimulationConfig, simulate_model

from conftest import make_dataset


def identity_permutation(rng, size):
    return np.arange(size)


class TestMeanForest:
    def test_constant_response(self):
        rng = np.random.default_rng(0)
        ds = Dataset(y=np.full(60, 2.5), x=rng.standard_normal((60, 2)), names=("a", "b"))
        f = fit_mean_forest(ds, ds.all_covariates(), MeanForestParams(trees=20), seed=1)
        assert np.allclose(predict_mean(f, rng.standard_normal((5, 2))), 2.5)

    def test_max_leaf_size_gives_bootstrap_means(self):
        ds = make_dataset(n=50, d=2, seed=1, signal=1.0)
        f = fit_mean_forest(
            ds, ds.all_covariates(), MeanForestParams(trees=10, min_leaf_size=50), seed=2
        )
        # every tree is a single node holding its bootstrap mean
        assert f.feature.shape[0] == 10
        assert (f.feature[f.tree_offsets[:-1]] == -1).all()
        for b in range(10):
            boot_mean = np.average(ds.y, weights=f.inbag_count[b])
            assert f.value[f.tree_offsets[b]] == pytest.approx(boot_mean, rel=1e-12)

    def test_signal_beats_trivial_predictor(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((500, 2))
        y = x[:, 0].copy()
        ds = Dataset(y=y, x=x, names=("s", "n"))
        f = fit_mean_forest(ds, ds.all_covariates(), MeanForestParams(trees=150), seed=3)
        assert oob_mse(f) < np.var(y) / 2

    def test_empty_covariates_rejected(self):
        ds = make_dataset(n=30, d=1, seed=0)
        with pytest.raises(BaselineError):
            fit_mean_forest(ds, IndexSet(), MeanForestParams(trees=5), seed=0)


class TestPermutationImportance:
    def test_identity_permutation_is_exactly_zero(self):
        ds = make_dataset(n=120, d=2, seed=4, signal=1.0)
        f = fit_mean_forest(ds, ds.all_covariates(), MeanForestParams(trees=30), seed=5)
        got = permutation_importance(f, ds, 0, permutation_fn=identity_permutation)
        assert got == 0.0

    def test_noise_and_signal_scores(self):
        # fresh data per replicate: the replicate spread is then a valid
        # standard error for the population importance (a single dataset
        # carries an O(1/sqrt(n)) importance offset that forest replicates
        # cluster around)
        noise_scores, signal_scores = [], []
        for r in range(20):
            rng = np.random.default_rng(600 + r)
            x = rng.standard_normal((300, 3))
            y = x[:, 0] + 0.1 * rng.standard_normal(300)
            ds = Dataset(y=y, x=x, names=("s", "n1", "n2"))
            f = fit_mean_forest(ds, ds.all_covariates(), MeanForestParams(trees=60), seed=r)
            noise_scores.append(permutation_importance(f, ds, 1))
            signal_scores.append(permutation_importance(f, ds, 0))
        se_noise = np.std(noise_scores, ddof=1) / math.sqrt(len(noise_scores))
        se_signal = np.std(signal_scores, ddof=1) / math.sqrt(len(signal_scores))
        assert abs(np.mean(noise_scores)) <= 2 * se_noise
        assert np.mean(signal_scores) > 5 * se_signal

    def test_unknown_covariate_rejected(self):
        ds = make_dataset(n=60, d=2, seed=1)
        f = fit_mean_forest(ds, IndexSet((0,)), MeanForestParams(trees=10), seed=1)
        with pytest.raises(BaselineError):
            permutation_importance(f, ds, 1)


class TestBackwardSelect:
    def test_single_covariate_boundary(self):
        ds = make_dataset(n=100, d=1, seed=7, signal=2.0, noise_sd=0.3)
        res = backward_select_mse(ds, MeanForestParams(trees=60), n_replicates=3, seed=1)
        assert len(res.path) == 1
        assert res.path[0].covariates.indices == (0,)
        # strong signal: the one-covariate model beats the grand mean
        assert res.path[0].oob_mse < res.trivial_mse
        assert res.selected.indices == (0,)

    def test_pure_noise_selects_nothing(self):
        ds = make_dataset(n=150, d=2, seed=8, signal=None)
        res = backward_select_mse(ds, MeanForestParams(trees=60), n_replicates=3, seed=2)
        assert res.selected.indices == ()
        assert res.trivial_mse <= min(s.oob_mse for s in res.path)

    def test_path_shape_and_determinism(self):
        ds = make_dataset(n=120, d=4, seed=9, signal=1.5)
        a = backward_select_mse(ds, MeanForestParams(trees=40), n_replicates=2, seed=5)
        b = backward_select_mse(ds, MeanForestParams(trees=40), n_replicates=2, seed=5)
        assert len(a.path) == 4
        assert len(a.path[-1].covariates) == 1
        sizes = [len(s.covariates) for s in a.path]
        assert sizes == [4, 3, 2, 1]
        assert a.to_dict() == b.to_dict()
        chosen = set(a.selected.indices)
        assert chosen == set() or any(
            set(s.covariates.indices) == chosen for s in a.path
        )

    def test_model1_finds_signals_but_keeps_noise(self):
        # qualitative reproduction at desk scale: the elimination path's
        # MSE-minimal set retains all mean signals yet systematically keeps
        # noise covariates as well
        params = MeanForestParams(trees=80)
        all_sig, any_noise = 0, 0
        for rep in range(8):
            sim = simulate_model(SimulationConfig(model=1, n=600, rho=0.0, d=15, seed=900 + rep))
            res = backward_select_mse(sim.dataset, params=params, n_replicates=2, seed=rep, threads=2)
            sel = set(res.selected.indices)
            all_sig += {0, 5, 10} <= sel
            any_noise += len(sel - {0, 5, 10}) > 0
        assert all_sig >= 6
        assert any_noise >= 3


class TestNgrFit:
    def test_intercept_only_matches_closed_form(self):
        rng = np.random.default_rng(10)
        y = rng.standard_normal(2000)
        ds = Dataset(y=y, x=rng.standard_normal((2000, 1)), names=("a",))
        m = ngr_fit(ds, IndexSet())
        sigma_mle = float(np.std(y))
        se_mu = sigma_mle / math.sqrt(2000)
        se_g0 = 1.0 / math.sqrt(2 * 2000)
        assert abs(m.beta[0] - y.mean()) <= 3 * se_mu
        assert abs(m.gamma[0] - math.log(sigma_mle)) <= 3 * se_g0
        assert m.grad_norm <= 1e-8

    def test_homoskedastic_linear_recovery(self):
        rng = np.random.default_rng(11)
        n = 5000
        x = rng.standard_normal((n, 2))
        y = 2.0 * x[:, 0] + rng.standard_normal(n)
        ds = Dataset(y=y, x=x, names=("a", "b"))
        m = ngr_fit(ds, IndexSet((0,)))
        se_b, se_g = m.standard_errors()
        assert abs(m.beta[1] - 2.0) <= 3 * se_b[1]
        assert abs(m.gamma[1]) <= 3 * se_g[1]

    def test_heteroskedastic_scale_recovery(self):
        sim = simulate_model(SimulationConfig(model=2, n=10000, rho=0.0, d=15, seed=12))
        m = ngr_fit(sim.dataset, IndexSet((0, 5, 10)))
        # gamma ordering follows sorted covariates: (intercept, x0, x5, x10)
        assert abs(m.gamma[2] - 0.5) <= 0.1
        assert abs(m.gamma[3] - 1.0 / 3.0) <= 0.1
        assert abs(m.beta[1] - 1.0) <= 0.1

    def test_ascent_from_least_squares_start(self):
        rng = np.random.default_rng(13)
        n = 400
        x = rng.standard_normal((n, 2))
        y = x[:, 0] + np.exp(0.4 * x[:, 1]) * rng.standard_normal(n)
        ds = Dataset(y=y, x=x, names=("a", "b"))
        m = ngr_fit(ds, IndexSet((0, 1)))
        dm = np.column_stack([np.ones(n), x])
        beta0, *_ = np.linalg.lstsq(dm, y, rcond=None)
        resid = y - dm @ beta0
        gamma0 = np.zeros(3)
        gamma0[0] = math.log(max(float(np.std(resid)), 1e-8))
        ll0, _, _ = _ngr_loglik_grad_hess(dm, y, beta0, gamma0, want_hess=False)
        assert m.loglik >= ll0
        assert m.grad_norm <= 1e-8

    def test_rank_deficient_design_rejected(self):
        rng = np.random.default_rng(14)
        col = rng.standard_normal(100)
        x = np.column_stack([col, col])
        ds = Dataset(y=rng.standard_normal(100), x=x, names=("a", "b"))
        with pytest.raises(NgrRankError):
            ngr_fit(ds, IndexSet((0, 1)))

    def test_bic_definition(self):
        rng = np.random.default_rng(15)
        ds = Dataset(y=rng.standard_normal(300), x=rng.standard_normal((300, 1)), names=("a",))
        m = ngr_fit(ds, IndexSet((0,)))
        p = 2 * (1 + 1)
        assert m.bic == pytest.approx(-2 * m.loglik + p * math.log(300), rel=1e-12)


class TestNgrStepwise:
    def test_null_selects_empty(self):
        picks = 0
        for rep in range(100):
            rng = np.random.default_rng(3000 + rep)
            ds = Dataset(
                y=rng.standard_normal(1000),
                x=rng.standard_normal((1000, 5)),
                names=tuple("abcde"),
            )
            m = ngr_bic_stepwise(ds)
            picks += m.selected.indices == ()
        assert picks >= 90

    def test_single_signal_selected_exactly(self):
        hits = 0
        for rep in range(100):
            rng = np.random.default_rng(4000 + rep)
            x = rng.standard_normal((1000, 5))
            y = x[:, 0] + rng.standard_normal(1000)
            ds = Dataset(y=y, x=x, names=tuple("abcde"))
            m = ngr_bic_stepwise(ds)
            hits += m.selected.indices == (0,)
        assert hits >= 80

    def test_bic_never_increases_along_search(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((800, 4))
        y = x[:, 0] - 0.5 * x[:, 1] + rng.standard_normal(800)
        ds = Dataset(y=y, x=x, names=("a", "b", "c", "d"))
        final = ngr_bic_stepwise(ds)
        intercept_only = ngr_fit(ds, IndexSet())
        assert final.bic <= intercept_only.bic


class TestLooMeanMse:
    def test_matches_direct_computation(self):
        y = np.array([1.0, 2.0, 4.0, 7.0])
        direct = np.mean(
            [(y[i] - np.delete(y, i).mean()) ** 2 for i in range(y.size)]
        )
        assert _loo_mean_mse(y) == pytest.approx(direct, rel=1e-12)
