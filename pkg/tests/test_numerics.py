"""Tests for the linear-algebra and penalized-quadratic kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossbal.errors import DimensionMismatch, NotConverged, NotPositiveDefinite
from crossbal.numerics import (
    OlsFit,
    PenalizedQuadratic,
    kkt_residual,
    ols_fit,
    penalized_quadratic_min,
    solve_spd,
)


def gauss_solve(a, b):
    """Brute-force Gaussian elimination with partial pivoting (test oracle)."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = a.shape[0]
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        a[[col, piv]] = a[[piv, col]]
        b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, n):
            f = a[row, col] / a[col, col]
            a[row, col:] -= f * a[col, col:]
            b[row] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


class TestSolveSpd:
    def test_identity(self):
        assert np.allclose(solve_spd(np.eye(2), [1.0, 2.0]), [1.0, 2.0])

    def test_diagonal(self):
        assert np.allclose(solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])

    def test_symmetric_2x2(self):
        x = solve_spd([[2.0, 1.0], [1.0, 2.0]], [3.0, 3.0])
        assert np.allclose(x, [1.0, 1.0], atol=1e-12)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            solve_spd([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])

    def test_asymmetric_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            solve_spd([[1.0, 0.5], [0.1, 1.0]], [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            solve_spd(np.eye(3), [1.0, 2.0])

    def test_residual_contract_random(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            m = rng.normal(size=(n + 5, n))
            a = m.T @ m / n + 0.1 * np.eye(n)
            b = rng.normal(size=n)
            x = solve_spd(a, b)
            assert np.abs(a @ x - b).max() <= 1e-8 * (1 + np.abs(b).max())

    def test_round_trip_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(2, 15))
            m = rng.normal(size=(2 * n, n))
            a = m.T @ m / n
            x_true = rng.normal(size=n)
            x = solve_spd(a, a @ x_true)
            assert np.linalg.norm(x - x_true) <= 1e-7 * (1 + np.linalg.norm(x_true))


class TestOlsFit:
    def test_intercept_only_is_mean(self):
        y = np.array([3.0, 5.0, 7.0, 1.0])
        fit = ols_fit(np.ones((4, 1)), y)
        assert np.allclose(fit.coefficients, y.mean())

    def test_exact_interpolation(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 3))
        beta = np.array([1.0, -2.0, 0.5])
        fit = ols_fit(x, x @ beta)
        assert np.abs(fit.residuals).max() < 1e-8

    def test_matches_gaussian_elimination_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(40, 3))
        y = x @ np.array([2.0, 0.0, -1.0]) + rng.normal(scale=0.3, size=40)
        fit = ols_fit(x, y)
        oracle = gauss_solve(x.T @ x, x.T @ y)
        assert np.allclose(fit.coefficients, oracle, atol=1e-8)

    def test_intercept_prediction(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 2))
        y = 4.0 + x @ np.array([1.0, 2.0])
        fit = ols_fit(x, y, add_intercept=True)
        assert np.allclose(fit.predict(x), y, atol=1e-8)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(20, 80))
            d = int(rng.integers(1, 6))
            x = rng.normal(size=(n, d))
            y = rng.normal(size=n)
            fit = ols_fit(x, y)
            bound = 1e-6 * n * max(np.abs(x).max(), 1.0)
            assert np.abs(x.T @ fit.residuals).max() <= bound

    def test_rank_deficient_proceeds_with_flag(self):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(25, 2))
        x = np.column_stack([base, base[:, 0]])  # exact duplicate column
        fit = ols_fit(x, rng.normal(size=25))
        assert any(note.startswith("ridge_floor") for note in fit.diagnostics)
        assert np.all(np.isfinite(fit.coefficients))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ols_fit(np.ones((4, 2)), np.ones(5))


def grid_minimize(p, lo=-3.0, hi=3.0, step=1e-3):
    """Brute-force 2-d lattice search, refined locally (test oracle)."""
    coarse = np.arange(lo, hi + 10 * step, 10 * step)
    l1, l2 = np.meshgrid(coarse, coarse, indexing="ij")
    best = _grid_eval(p, l1, l2)
    for _ in range(2):  # refine around the incumbent, down to the 1e-3 lattice
        a = np.arange(best[0] - 20 * step, best[0] + 20 * step, step)
        b = np.arange(best[1] - 20 * step, best[1] + 20 * step, step)
        l1, l2 = np.meshgrid(a, b, indexing="ij")
        best = _grid_eval(p, l1, l2)
    return np.array(best)


def _grid_eval(p, l1, l2):
    g, c, nu = p.gram, p.linear, p.penalty
    obj = (
        g[0, 0] * l1**2
        + 2 * g[0, 1] * l1 * l2
        + g[1, 1] * l2**2
        - 2 * (c[0] * l1 + c[1] * l2)
        + 2 * (nu[0] * np.abs(l1) + nu[1] * np.abs(l2))
    )
    idx = np.unravel_index(np.argmin(obj), obj.shape)
    return float(l1[idx]), float(l2[idx])


class TestPenalizedQuadratic:
    def test_orthonormal_soft_threshold(self):
        p = PenalizedQuadratic(np.eye(2), [3.0, -1.0], [1.0, 1.0])
        sol = penalized_quadratic_min(p)
        assert np.allclose(sol.lam, [2.0, 0.0], atol=1e-9)

    def test_unpenalized_equals_direct_solve(self):
        rng = np.random.default_rng(6)
        m = rng.normal(size=(30, 4))
        g = m.T @ m / 30 + 0.2 * np.eye(4)
        c = rng.normal(size=4)
        sol = penalized_quadratic_min(PenalizedQuadratic(g, c, np.zeros(4)))
        assert np.allclose(sol.lam, np.linalg.solve(g, c), atol=1e-8)

    def test_matches_grid_oracle(self):
        p = PenalizedQuadratic(
            np.array([[1.0, 0.5], [0.5, 1.0]]), [1.0, 0.2], [0.1, 0.1]
        )
        sol = penalized_quadratic_min(p)
        oracle = grid_minimize(p)
        assert np.abs(sol.lam - oracle).max() <= 1e-3 + 1e-6
        assert p.objective(sol.lam) <= p.objective(oracle) + 1e-4

    def test_kkt_residual_small(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            d = int(rng.integers(1, 10))
            m = rng.normal(size=(3 * d + 2, d))
            g = m.T @ m / (3 * d + 2)
            c = rng.normal(size=d)
            nu = np.abs(rng.normal(scale=0.3, size=d))
            sol = penalized_quadratic_min(PenalizedQuadratic(g, c, nu), tol=1e-10)
            assert sol.kkt_residual <= 1e-6

    def test_monotone_descent(self):
        rng = np.random.default_rng(9)
        m = rng.normal(size=(40, 6))
        g = m.T @ m / 40
        p = PenalizedQuadratic(g, rng.normal(size=6), np.full(6, 0.05))
        sol = penalized_quadratic_min(p, trace_objective=True)
        trace = np.array(sol.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12)

    def test_nonnegative_constraint(self):
        p = PenalizedQuadratic(
            np.eye(2), [-2.0, 3.0], [0.5, 0.5], nonnegative=[True, True]
        )
        sol = penalized_quadratic_min(p)
        assert np.allclose(sol.lam, [0.0, 2.5], atol=1e-9)
        assert kkt_residual(p, sol.lam) <= 1e-6

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_l1_shrinks_with_larger_penalty(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 8))
        m = rng.normal(size=(4 * d, d))
        g = m.T @ m / (4 * d)
        c = rng.normal(size=d)
        nu = np.abs(rng.normal(scale=0.2, size=d))
        extra = np.abs(rng.normal(scale=0.3, size=d))
        lo = penalized_quadratic_min(PenalizedQuadratic(g, c, nu)).lam
        hi = penalized_quadratic_min(PenalizedQuadratic(g, c, nu + extra)).lam
        assert np.abs(hi).sum() <= np.abs(lo).sum() + 1e-7

    def test_not_converged_carries_best(self):
        rng = np.random.default_rng(10)
        m = rng.normal(size=(50, 8))
        g = m.T @ m / 50
        p = PenalizedQuadratic(g, rng.normal(size=8), np.zeros(8))
        with pytest.raises(NotConverged) as err:
            penalized_quadratic_min(p, tol=1e-14, max_iter=1)
        assert err.value.best is not None
        assert err.value.residual is not None

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            PenalizedQuadratic(np.eye(2), [1.0, 1.0], [-0.1, 0.0])
        with pytest.raises(ValueError):
            PenalizedQuadratic([[1.0, 0.5], [0.2, 1.0]], [1.0, 1.0], [0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            PenalizedQuadratic(np.eye(2), [1.0], [0.0, 0.0])
