"""Tests for Wald and bootstrap confidence intervals."""

import numpy as np
import pytest

from crossbal.data import Dataset
from crossbal.inference import (
    FoldWald,
    WaldArtifacts,
    bootstrap_ci,
    quantile_order_stat,
    wald_ci,
)


def make_artifacts(rng, n_c=60, n_t=40, noise=1.0):
    m0_c = rng.normal(size=n_c)
    m0_t = rng.normal(size=n_t)
    half_c, half_t = n_c // 2, n_t // 2
    folds = []
    for cs, ts in (
        (slice(0, half_c), slice(0, half_t)),
        (slice(half_c, None), slice(half_t, None)),
    ):
        phi_c = np.column_stack([np.ones(m0_c[cs].size), m0_c[cs]])
        phi_t = np.column_stack([np.ones(m0_t[ts].size), m0_t[ts]])
        y_c = m0_c[cs] + noise * rng.normal(size=m0_c[cs].size)
        folds.append(
            FoldWald(phi_c=phi_c, y_c=y_c, weights=np.ones(m0_c[cs].size), phi_t=phi_t)
        )
    return WaldArtifacts(tuple(folds), n_c, n_t), m0_t


class TestWaldCi:
    def test_constant_outcome_zero_variance(self):
        n_c, n_t = 20, 10
        fold = FoldWald(
            phi_c=np.column_stack([np.ones(n_c), np.zeros(n_c)]),
            y_c=np.full(n_c, 3.0),
            weights=np.ones(n_c),
            phi_t=np.column_stack([np.ones(n_t), np.zeros(n_t)]),
        )
        out = wald_ci(WaldArtifacts((fold,), n_c, n_t), 3.0)
        assert out["sigma2_hat"] == 0.0
        assert "degenerate_variance" in out["flags"]
        assert out["ci"][0] == out["ci"][1] == 3.0

    def test_noiseless_outcome_second_term_only(self):
        rng = np.random.default_rng(0)
        artifacts, m0_t = make_artifacts(rng, noise=0.0)
        out = wald_ci(artifacts, 0.0)
        n = artifacts.n_c + artifacts.n_t
        p_hat = artifacts.n_t / n
        # first term vanishes; second approximates Var(m0 | T=1) / p_hat
        per_fold = sum(
            np.sum((f.phi_t[:, 1] - f.phi_t[:, 1].mean()) ** 2)
            for f in artifacts.folds
        )
        expected = per_fold / (artifacts.n_t * p_hat)
        assert abs(out["sigma2_hat"] - expected) < 1e-10

    def test_shift_invariance_with_intercept(self):
        rng = np.random.default_rng(1)
        artifacts, _ = make_artifacts(rng)
        base = wald_ci(artifacts, 0.0)["sigma2_hat"]
        shifted_folds = tuple(
            FoldWald(f.phi_c, f.y_c + 50.0, f.weights, f.phi_t)
            for f in artifacts.folds
        )
        shifted = wald_ci(
            WaldArtifacts(shifted_folds, artifacts.n_c, artifacts.n_t), 0.0
        )["sigma2_hat"]
        assert abs(base - shifted) < 1e-8 * (1 + base)

    def test_level_controls_width(self):
        rng = np.random.default_rng(2)
        artifacts, _ = make_artifacts(rng)
        w90 = wald_ci(artifacts, 0.0, level=0.90)["ci"]
        w99 = wald_ci(artifacts, 0.0, level=0.99)["ci"]
        assert (w99[1] - w99[0]) > (w90[1] - w90[0])

    def test_invalid_level(self):
        rng = np.random.default_rng(3)
        artifacts, _ = make_artifacts(rng)
        with pytest.raises(ValueError):
            wald_ci(artifacts, 0.0, level=1.5)


class TestQuantileConvention:
    def test_order_statistic(self):
        values = np.arange(1.0, 11.0)  # 1..10
        assert quantile_order_stat(values, 0.25) == 3.0  # ceil(2.5) = 3
        assert quantile_order_stat(values, 0.5) == 5.0
        assert quantile_order_stat(values, 1.0) == 10.0
        assert quantile_order_stat(values, 0.001) == 1.0


def mean_closure(ds, seed):
    return float(ds.Y.mean())


class TestBootstrapCi:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        d = Dataset(
            X=rng.normal(size=(50, 2)),
            T=np.array([0, 1] * 25),
            Y=rng.normal(size=50),
        )
        a = bootstrap_ci(d, mean_closure, b=100, seed=9)
        b = bootstrap_ci(d, mean_closure, b=100, seed=9)
        assert a["ci"] == b["ci"]
        assert np.array_equal(a["bootstrap_estimates"], b["bootstrap_estimates"])

    def test_monotone_in_level(self):
        rng = np.random.default_rng(5)
        d = Dataset(
            X=rng.normal(size=(80, 1)),
            T=np.array([0, 1] * 40),
            Y=rng.normal(size=80),
        )
        lo = bootstrap_ci(d, mean_closure, b=200, level=0.8, seed=10)["ci"]
        hi = bootstrap_ci(d, mean_closure, b=200, level=0.99, seed=10)["ci"]
        assert (hi[1] - hi[0]) >= (lo[1] - lo[0])

    def test_redraws_counted_with_rare_group(self):
        rng = np.random.default_rng(6)
        n = 40
        t = np.zeros(n, dtype=int)
        t[0] = 1  # single treated unit: ~e^-1 of resamples miss it
        d = Dataset(X=rng.normal(size=(n, 1)), T=t, Y=rng.normal(size=n))
        out = bootstrap_ci(d, mean_closure, b=150, seed=11)
        assert out["redraws"] > 0
        assert np.isfinite(out["ci"][0]) and np.isfinite(out["ci"][1])

    def test_stratified_preserves_group_sizes(self):
        rng = np.random.default_rng(7)
        n = 60
        t = np.array([0] * 45 + [1] * 15)
        d = Dataset(X=rng.normal(size=(n, 1)), T=t, Y=rng.normal(size=n))

        sizes = []

        def closure(ds, seed):
            sizes.append(int(ds.T.sum()))
            return 0.0

        bootstrap_ci(d, closure, b=100, seed=12, stratified=True)
        assert all(s == 15 for s in sizes)

    @pytest.mark.slow
    def test_percentile_coverage_sample_mean(self):
        # textbook calibration: normal data, n = 200, B = 1000, the true
        # mean should be covered ~95% of the time
        covered = 0
        outer = 500
        for r in range(outer):
            rng = np.random.default_rng(20_000 + r)
            y = rng.normal(loc=1.5, size=200)
            d = Dataset(
                X=np.zeros((200, 1)),
                T=np.tile([0, 1], 100),
                Y=y,
            )
            lo, hi, _ = bootstrap_ci(d, mean_closure, b=1000, seed=r)["ci"]
            covered += lo <= 1.5 <= hi
        assert 0.92 <= covered / outer <= 0.97
