"""Tests for prognostic/propensity learners and feature maps."""

import numpy as np
import pytest

from crossbal.errors import EmptyComponents
from crossbal.learners import (
    FeatureMap,
    fit_forest,
    fit_prognostic,
    fit_propensity,
    make_feature_map,
)


class TestFitPrognostic:
    def test_ols_reproduces_linear_outcome(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(60, 3))
        y = 2.0 + x @ np.array([1.0, -1.0, 0.5])
        model = fit_prognostic(x, y, method="ols")
        assert np.abs(model.predict(x) - y).max() < 1e-8

    def test_constant_outcome_flagged(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 2))
        for method in ("ols", "lasso_cv", "forest"):
            model = fit_prognostic(x, np.full(30, 5.0), method=method)
            assert "degenerate_outcome" in model.flags
            assert np.allclose(model.predict(x), 5.0)

    def test_lasso_soft_threshold_on_orthonormal_design(self):
        rng = np.random.default_rng(2)
        n, p = 100, 4
        m = rng.normal(size=(n, p))
        m -= m.mean(axis=0)
        q, _ = np.linalg.qr(m)
        x = q * np.sqrt(n)
        y = x @ np.array([2.0, -0.8, 0.3, 0.0]) + rng.normal(size=n)
        from crossbal.lasso import lasso_path

        nu = 0.5
        path = lasso_path(x, y, nus=np.array([nu]))
        ols = x.T @ (y - y.mean()) / n
        expected = np.sign(ols) * np.maximum(np.abs(ols) - nu, 0.0) / x.std(axis=0)
        assert np.abs(path.coefs[0] - expected).max() < 1e-8

    def test_lasso_cv_records_path(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(120, 8))
        y = x[:, 0] + rng.normal(size=120)
        model = fit_prognostic(x, y, method="lasso_cv", seed=4)
        assert "cv_curve" in model.training_summary
        assert model.training_summary["nu_1se"] > 0


class TestFitPropensity:
    def test_probabilities_respect_clip(self):
        x = np.linspace(-3, 3, 40)[:, None]
        t = (x[:, 0] > 0).astype(float)  # perfectly separable
        model = fit_propensity(x, t, method="logistic", clip=0.01)
        p = model.predict_proba(x)
        assert p.min() >= 0.01 and p.max() <= 0.99
        assert "converged_by_clipping" in model.flags

    def test_null_slope_under_randomization(self):
        # t independent of x: slope estimates ~ N(0, SE^2); check 3 MC SEs
        rng = np.random.default_rng(5)
        n = 4000
        x = rng.normal(size=(n, 2))
        t = (rng.uniform(size=n) < 0.5).astype(float)
        model = fit_propensity(x, t, method="logistic")
        # analytic SE of logistic score at p=0.5: sqrt(4/n) per slope
        se = np.sqrt(4.0 / n)
        assert np.abs(model.state.coefficients[1:]).max() <= 3 * se

    def test_highdim_logistic_consistency(self):
        # A wide logistic DGP: clipped-normal X, beta_j = 1{j<=5}
        rng = np.random.default_rng(6)
        n, p = 5000, 100
        x = np.clip(rng.normal(size=(n, p)), -1, 1)
        beta = (np.arange(p) < 5).astype(float)
        prob = 1.0 / (1.0 + np.exp(-(x @ beta)))
        t = (rng.uniform(size=n) < prob).astype(float)
        model = fit_propensity(x, t, method="logistic")
        est = model.state.coefficients[1:]
        # 0.15 is 3 SEs per coefficient; the max over the 95 null
        # coefficients needs the wider max-statistics bound
        assert np.abs(est[:5] - 1.0).max() < 0.15
        assert np.abs(est[5:]).max() < 0.25

    def test_requires_both_classes(self):
        x = np.ones((10, 1))
        with pytest.raises(ValueError):
            fit_propensity(x, np.zeros(10))

    def test_odds_monotone_in_probability(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(200, 1))
        t = (rng.uniform(size=200) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
        model = fit_propensity(x, t, method="logistic")
        grid = np.linspace(-4, 4, 50)[:, None]
        p = model.predict_proba(grid)
        odds = model.odds(grid)
        assert np.all(np.diff(odds[np.argsort(p)]) >= -1e-12)


class TestFitForest:
    def test_constant_outcome(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(40, 3))
        model = fit_forest(x, np.full(40, 7.0), "regression", seed=1)
        assert np.allclose(model.predict(x), 7.0)

    def test_pure_noise_has_low_oob_r2(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(500, 4))
        y = rng.normal(size=500)
        model = fit_forest(x, y, "regression", hyper={"oob_score": True}, seed=2)
        assert model.oob_score_ <= 0.1

    def test_step_function_recovered(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2000, 3))
        y = (x[:, 0] > 0).astype(float)
        model = fit_forest(x, y, "regression", seed=3)
        grid = rng.normal(size=(500, 3))
        err = np.abs(model.predict(grid) - (grid[:, 0] > 0)).mean()
        assert err <= 0.1

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        a = fit_forest(x, y, "regression", seed=5).predict(x)
        b = fit_forest(x, y, "regression", seed=5).predict(x)
        assert np.array_equal(a, b)

    def test_probability_task_in_unit_interval(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(100, 2))
        t = (rng.uniform(size=100) < 0.4).astype(int)
        model = fit_forest(x, t, "probability", seed=6)
        p = model.predict_proba(x)[:, 1]
        assert np.all((p >= 0) & (p <= 1))

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            fit_forest(np.ones((10, 1)), np.ones(10), "regression")


class TestFeatureMap:
    def _models(self, rng, fold_id=1):
        x = rng.normal(size=(80, 2))
        y = x[:, 0] + rng.normal(size=80)
        t = (rng.uniform(size=80) < 0.5).astype(float)
        m = fit_prognostic(x, y, "ols", fold_id=fold_id)
        e = fit_propensity(x, t, "logistic", fold_id=fold_id)
        return x, m, e

    def test_prognostic_only_dim(self):
        rng = np.random.default_rng(13)
        x, m, _ = self._models(rng)
        fmap = make_feature_map([m], include="prognostic_only")
        assert fmap.output_dim == 1
        assert fmap.apply(x).shape == (80, 1)

    def test_both_gives_odds_second(self):
        rng = np.random.default_rng(14)
        x, m, e = self._models(rng)
        fmap = make_feature_map([m, e], include="both")
        assert fmap.output_dim == 2
        cols = fmap.apply(x)
        p = e.predict_proba(x)
        assert np.allclose(cols[:, 1], p / (1 - p))

    def test_stacked_multi_preserves_order(self):
        rng = np.random.default_rng(15)
        x, m1, e1 = self._models(rng)
        _, m2, e2 = self._models(rng)
        fmap = make_feature_map([m1, m2, e1, e2], include="stacked_multi")
        assert fmap.output_dim == 4
        assert [k for k, _ in fmap.components] == [
            "prognostic",
            "prognostic",
            "propensity_odds",
            "propensity_odds",
        ]

    def test_empty_components(self):
        with pytest.raises(EmptyComponents):
            make_feature_map([], include="both")

    def test_mixed_folds_rejected(self):
        rng = np.random.default_rng(16)
        _, m1, _ = self._models(rng, fold_id=1)
        _, _, e2 = self._models(rng, fold_id=2)
        with pytest.raises(ValueError):
            make_feature_map([m1, e2], include="both")
