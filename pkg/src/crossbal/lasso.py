"""Lasso paths with cross-validated penalty selection.

Penalties follow the glmnet convention: gaussian fits minimize
``(1/2n) ||y - b0 - X b||^2 + nu ||b||_1`` and binomial fits minimize the
mean negative log-likelihood plus ``nu ||b||_1``, both on internally
standardized columns with an unpenalized intercept. On an orthonormal
design the gaussian solution is therefore the soft-threshold of the OLS
coefficients at exactly ``nu``.

Cross-validation uses 10 folds and a 100-point log-spaced path from
``nu_max`` (the smallest penalty zeroing every coefficient) down to
``1e-4 * nu_max``, selecting by the 1se rule: the largest penalty whose
mean validation error is within one standard error of the minimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng as rngmod
from .errors import DimensionMismatch

PATH_POINTS = 100
PATH_MIN_RATIO = 1e-4
CV_FOLDS = 10


@njit(cache=True)
def _gram_lasso_path(gram, c, nus, tol, max_sweeps):  # pragma: no cover
    """Warm-started coordinate descent over a descending penalty ladder."""
    d = gram.shape[0]
    k = nus.shape[0]
    out = np.zeros((k, d))
    beta = np.zeros(d)
    z = np.zeros(d)  # gram @ beta, maintained incrementally
    for step in range(k):
        nu = nus[step]
        for _ in range(max_sweeps):
            max_change = 0.0
            linf = 0.0
            for j in range(d):
                gjj = gram[j, j]
                if gjj <= 0.0:
                    continue
                target = c[j] - (z[j] - gjj * beta[j])
                mag = abs(target) - nu
                if mag > 0.0:
                    new = mag / gjj if target > 0.0 else -mag / gjj
                else:
                    new = 0.0
                delta = new - beta[j]
                if delta != 0.0:
                    for t in range(d):
                        z[t] += gram[t, j] * delta
                    beta[j] = new
                    if abs(delta) > max_change:
                        max_change = abs(delta)
                if abs(beta[j]) > linf:
                    linf = abs(beta[j])
            if max_change <= tol * (1.0 + linf):
                break
        out[step] = beta
    return out


@njit(cache=True)
def _wls_cd(x, w, r, beta, cols, nu, tol, max_sweeps):  # pragma: no cover
    """Penalized weighted least squares by naive coordinate descent.

    Minimizes (1/2n) sum w_i r_i^2 + nu ||beta||_1 over the coordinates
    listed in ``cols`` (strong-rule eligible set); r is maintained as the
    working residual including the intercept. Active-coordinate sweeps
    alternate with full passes over ``cols`` until a full pass is stable.
    """
    n = x.shape[0]
    m = cols.shape[0]
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    denom = np.zeros(m)
    for jj in range(m):
        j = cols[jj]
        acc = 0.0
        for i in range(n):
            acc += w[i] * x[i, j] * x[i, j]
        denom[jj] = acc / n
    intercept_shift = 0.0
    full_pass = True
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        linf = 0.0
        for jj in range(m):
            j = cols[jj]
            if not full_pass and beta[j] == 0.0:
                continue
            if denom[jj] <= 0.0:
                continue
            rho = 0.0
            for i in range(n):
                rho += w[i] * x[i, j] * r[i]
            target = rho / n + denom[jj] * beta[j]
            mag = abs(target) - nu
            if mag > 0.0:
                new = mag / denom[jj] if target > 0.0 else -mag / denom[jj]
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                for i in range(n):
                    r[i] -= x[i, j] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
            if abs(beta[j]) > linf:
                linf = abs(beta[j])
        # unpenalized intercept step
        acc = 0.0
        for i in range(n):
            acc += w[i] * r[i]
        shift = acc / wsum
        if abs(shift) > 0.0:
            for i in range(n):
                r[i] -= shift
            intercept_shift += shift
            if abs(shift) > max_change:
                max_change = abs(shift)
        if max_change <= tol * (1.0 + linf):
            if full_pass:
                break
            full_pass = True
        else:
            full_pass = False
    return intercept_shift, sweeps


@njit(cache=True)
def _logistic_path_kernel(x, t, nus, irls_iter, tol):  # pragma: no cover
    """Full binomial path: IRLS + strong-rule screened coordinate descent."""
    n, p = x.shape
    k = nus.shape[0]
    coefs = np.zeros((k, p))
    intercepts = np.zeros(k)
    tbar = 0.0
    for i in range(n):
        tbar += t[i]
    tbar /= n
    intercept = np.log(tbar / (1.0 - tbar))
    beta = np.zeros(p)
    beta_old = np.zeros(p)
    eta = np.full(n, intercept)
    prob = np.empty(n)
    w = np.empty(n)
    z = np.empty(n)
    r = np.empty(n)
    grad = np.empty(p)
    eligible = np.zeros(p, np.bool_)
    nu_prev = nus[0]
    for step in range(k):
        nu = nus[step]
        for i in range(n):
            e = eta[i]
            if e > 30.0:
                e = 30.0
            elif e < -30.0:
                e = -30.0
            prob[i] = 1.0 / (1.0 + np.exp(-e))
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += x[i, j] * (t[i] - prob[i])
            grad[j] = acc / n
        thresh = 2.0 * nu - nu_prev
        for j in range(p):
            eligible[j] = (abs(grad[j]) >= thresh) or (beta[j] != 0.0)
        for _ in range(5):
            m = 0
            for j in range(p):
                if eligible[j]:
                    m += 1
            cols = np.empty(m, np.int64)
            idx = 0
            for j in range(p):
                if eligible[j]:
                    cols[idx] = j
                    idx += 1
            for _ in range(irls_iter):
                for i in range(n):
                    e = eta[i]
                    if e > 30.0:
                        e = 30.0
                    elif e < -30.0:
                        e = -30.0
                    pi = 1.0 / (1.0 + np.exp(-e))
                    prob[i] = pi
                    wi = pi * (1.0 - pi)
                    if wi < 1e-5:
                        wi = 1e-5
                    w[i] = wi
                    z[i] = eta[i] + (t[i] - pi) / wi
                    r[i] = z[i] - eta[i]
                for j in range(p):
                    beta_old[j] = beta[j]
                shift, _ = _wls_cd(x, w, r, beta, cols, nu, tol, 500)
                intercept += shift
                for i in range(n):
                    eta[i] = z[i] - r[i]
                maxdiff = abs(shift)
                linf = 0.0
                for j in range(p):
                    d = abs(beta[j] - beta_old[j])
                    if d > maxdiff:
                        maxdiff = d
                    if abs(beta[j]) > linf:
                        linf = abs(beta[j])
                if maxdiff <= 1e-6 * (1.0 + linf):
                    break
            for i in range(n):
                e = eta[i]
                if e > 30.0:
                    e = 30.0
                elif e < -30.0:
                    e = -30.0
                prob[i] = 1.0 / (1.0 + np.exp(-e))
            expanded = False
            for j in range(p):
                if not eligible[j]:
                    acc = 0.0
                    for i in range(n):
                        acc += x[i, j] * (t[i] - prob[i])
                    if abs(acc / n) > nu + 1e-9:
                        eligible[j] = True
                        expanded = True
            if not expanded:
                break
        nu_prev = nu
        for j in range(p):
            coefs[step, j] = beta[j]
        intercepts[step] = intercept
    return coefs, intercepts


def _standardize_columns(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd <= 1e-12 * (1.0 + np.abs(mu)), 1.0, sd)
    return (x - mu) / sd, mu, sd


def _nu_ladder(nu_max, n_points, min_ratio):
    nu_max = max(nu_max, 1e-12)
    return np.exp(
        np.linspace(np.log(nu_max), np.log(nu_max * min_ratio), n_points)
    )


@dataclass(frozen=True)
class LassoPath:
    """Coefficients along a penalty ladder, on the raw input scale."""

    nus: np.ndarray
    coefs: np.ndarray  # shape (len(nus), p)
    intercepts: np.ndarray

    def coef_at(self, nu: float) -> tuple[float, np.ndarray]:
        idx = int(np.argmin(np.abs(self.nus - nu)))
        return float(self.intercepts[idx]), self.coefs[idx]


@dataclass(frozen=True)
class CvLassoFit:
    """A penalty path plus the 1se cross-validated choice."""

    path: LassoPath
    family: str
    nu: float
    intercept: float
    coef: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    chosen_index: int

    def linear_predictor(self, x) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=np.float64) @ self.coef

    def predict(self, x) -> np.ndarray:
        eta = self.linear_predictor(x)
        if self.family == "binomial":
            return 1.0 / (1.0 + np.exp(-np.clip(eta, -30, 30)))
        return eta

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coef != 0.0)


def lasso_path(
    x,
    y,
    nus: np.ndarray | None = None,
    n_points: int = PATH_POINTS,
    min_ratio: float = PATH_MIN_RATIO,
    tol: float = 1e-9,
) -> LassoPath:
    """Gaussian lasso path (gram-based coordinate descent)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionMismatch("X must be (n, p) and y length n")
    n = x.shape[0]
    xs, mu, sd = _standardize_columns(x)
    yc = y - y.mean()
    c = xs.T @ yc / n
    if nus is None:
        nus = _nu_ladder(np.abs(c).max(initial=0.0), n_points, min_ratio)
    nus = np.asarray(nus, dtype=np.float64)
    gram = xs.T @ xs / n
    coefs_std = _gram_lasso_path(gram, c, nus, tol, 1000)
    coefs = coefs_std / sd
    intercepts = y.mean() - coefs @ mu
    return LassoPath(nus=nus, coefs=coefs, intercepts=intercepts)


def logistic_lasso_path(
    x,
    t,
    nus: np.ndarray | None = None,
    n_points: int = PATH_POINTS,
    min_ratio: float = PATH_MIN_RATIO,
    tol: float = 1e-6,
    irls_iter: int = 8,
) -> LassoPath:
    """Binomial lasso path via IRLS with penalized weighted least squares."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x.ndim != 2 or t.shape != (x.shape[0],):
        raise DimensionMismatch("X must be (n, p) and t length n")
    n, p = x.shape
    xs, mu, sd = _standardize_columns(x)
    xs = np.asfortranarray(xs)  # column scans dominate the CD kernel
    tbar = t.mean()
    if nus is None:
        nu_max = np.abs(xs.T @ (t - tbar) / n).max(initial=0.0)
        nus = _nu_ladder(nu_max, n_points, min_ratio)
    nus = np.asarray(nus, dtype=np.float64)
    coefs_std, intercepts_std = _logistic_path_kernel(
        xs, t, nus, irls_iter, tol
    )
    coefs = coefs_std / sd
    intercepts = intercepts_std - coefs @ mu
    return LassoPath(nus=nus, coefs=coefs, intercepts=intercepts)


def _cv_fold_ids(n: int, n_folds: int, seed: int) -> np.ndarray:
    gen = rngmod.child_generator(seed, "cv-folds")
    ids = np.repeat(np.arange(n_folds), int(np.ceil(n / n_folds)))[:n]
    return ids[gen.permutation(n)]


def _one_se_choice(cv_mean, cv_se):
    best = int(np.argmin(cv_mean))
    cutoff = cv_mean[best] + cv_se[best]
    eligible = np.flatnonzero(cv_mean <= cutoff)
    return int(eligible[0])  # nus descend, so the first eligible is largest


def _cv_lasso(x, response, family, n_folds, seed, n_points, min_ratio):
    x = np.asarray(x, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    n = x.shape[0]
    n_folds = min(n_folds, n)
    path_fn = lasso_path if family == "gaussian" else logistic_lasso_path
    full = path_fn(x, response, n_points=n_points, min_ratio=min_ratio)
    fold_ids = _cv_fold_ids(n, n_folds, seed)
    errors = np.zeros((n_folds, full.nus.size))
    for fold in range(n_folds):
        val = fold_ids == fold
        sub = path_fn(
            x[~val], response[~val], nus=full.nus, n_points=n_points,
            min_ratio=min_ratio,
        )
        eta = sub.intercepts[:, None] + sub.coefs @ x[val].T
        if family == "gaussian":
            errors[fold] = np.mean((response[val][None, :] - eta) ** 2, axis=1)
        else:
            eta = np.clip(eta, -30, 30)
            tv = response[val][None, :]
            errors[fold] = 2.0 * np.mean(np.log1p(np.exp(eta)) - tv * eta, axis=1)
    cv_mean = errors.mean(axis=0)
    cv_se = errors.std(axis=0, ddof=1) / np.sqrt(n_folds)
    chosen = _one_se_choice(cv_mean, cv_se)
    return CvLassoFit(
        path=full,
        family=family,
        nu=float(full.nus[chosen]),
        intercept=float(full.intercepts[chosen]),
        coef=full.coefs[chosen].copy(),
        cv_mean=cv_mean,
        cv_se=cv_se,
        chosen_index=chosen,
    )


def lasso_cv(
    x, y, n_folds: int = CV_FOLDS, seed: int = 0,
    n_points: int = PATH_POINTS, min_ratio: float = PATH_MIN_RATIO,
) -> CvLassoFit:
    """Cross-validated gaussian lasso with the 1se rule."""
    return _cv_lasso(x, y, "gaussian", n_folds, seed, n_points, min_ratio)


def logistic_lasso_cv(
    x, t, n_folds: int = CV_FOLDS, seed: int = 0,
    n_points: int = PATH_POINTS, min_ratio: float = PATH_MIN_RATIO,
) -> CvLassoFit:
    """Cross-validated binomial lasso with the 1se rule (deviance loss)."""
    return _cv_lasso(x, t, "binomial", n_folds, seed, n_points, min_ratio)
