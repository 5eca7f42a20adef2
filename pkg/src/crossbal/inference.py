"""Wald-type and bootstrap confidence intervals.

The Wald variance is the plug-in estimator

    sigma2 = [n0 (1 - p)]^-1 sum_{T=0} [w_i (Y_i - b' phi(X_i))]^2
           + [n1 p]^-1      sum_{T=1} (b' phi(X_i) - b' phi_bar)^2

with p = n1/n, where phi is the fold-specific balance feature vector
(intercept included), b the fold-specific OLS coefficient of control
outcomes on phi, and phi_bar the fold's treated feature mean. The CI is
theta +- z * sqrt(sigma2 / n).

The bootstrap resamples whole rows with replacement (unstratified by
default), reruns the entire estimator per resample with derived seeds,
and reports empirical quantiles using the ceil(q * B) order statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .data import Dataset
from .errors import DimensionMismatch, ResampleDegenerate
from .numerics import norm_ppf, ols_fit


@dataclass(frozen=True)
class FoldWald:
    """Per-fold pieces entering the Wald variance."""

    phi_c: np.ndarray  # controls x (intercept + features)
    y_c: np.ndarray
    weights: np.ndarray
    phi_t: np.ndarray  # this fold's treated rows, same columns

    def __post_init__(self):
        if self.phi_c.shape[0] != self.y_c.shape[0] or self.phi_c.shape[0] != self.weights.shape[0]:
            raise DimensionMismatch("control pieces must align")
        if self.phi_t.shape[1] != self.phi_c.shape[1]:
            raise DimensionMismatch("treated features must match control columns")


@dataclass(frozen=True)
class WaldArtifacts:
    folds: tuple[FoldWald, ...]
    n_c: int
    n_t: int

    @property
    def p_hat(self) -> float:
        return self.n_t / (self.n_c + self.n_t)


def wald_ci(
    artifacts: WaldArtifacts, theta_hat: float, level: float = 0.95
) -> dict:
    """Wald variance and CI from per-fold balance artifacts.

    A zero variance is allowed (constant outcomes): the CI collapses to
    a point and is flagged rather than raised.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    n_c, n_t = artifacts.n_c, artifacts.n_t
    if n_c < 2 or n_t < 2:
        raise ValueError("need at least two units per group")
    n = n_c + n_t
    p_hat = artifacts.p_hat
    term_c = 0.0
    term_t = 0.0
    for fold in artifacts.folds:
        beta = ols_fit(fold.phi_c, fold.y_c).coefficients
        resid = fold.y_c - fold.phi_c @ beta
        term_c += float(np.sum((fold.weights * resid) ** 2))
        if fold.phi_t.shape[0]:
            proj_t = fold.phi_t @ beta
            term_t += float(np.sum((proj_t - proj_t.mean()) ** 2))
    sigma2 = term_c / (n_c * (1.0 - p_hat)) + term_t / (n_t * p_hat)
    if sigma2 <= 1e-14 * (1.0 + theta_hat**2):  # ridge-floor residue
        sigma2 = 0.0
    flags = ("degenerate_variance",) if sigma2 <= 0.0 else ()
    z = norm_ppf(1.0 - (1.0 - level) / 2.0)
    half = z * float(np.sqrt(max(sigma2, 0.0) / n))
    return {
        "sigma2_hat": float(sigma2),
        "ci": (theta_hat - half, theta_hat + half, level),
        "flags": flags,
    }


def quantile_order_stat(values: np.ndarray, q: float) -> float:
    """Empirical quantile via the ceil(q * B) order statistic (1-indexed)."""
    b = values.shape[0]
    rank = min(max(int(np.ceil(q * b)), 1), b)
    return float(np.sort(values)[rank - 1])


def bootstrap_ci(
    dataset: Dataset,
    estimator_closure,
    b: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    stratified: bool = False,
    pass_rows: bool = False,
) -> dict:
    """Percentile bootstrap over whole-row resamples.

    ``estimator_closure(dataset, seed)`` must rerun the full procedure
    (splitting, learning or selection, balancing) on the resample; with
    ``pass_rows`` the closure also receives the resampled row indices so
    per-row side information (oracle values) can follow the rows.
    Resamples missing a treatment group are redrawn and counted, capped
    at 10 * B redraws.
    """
    if b < 100:
        raise ValueError("bootstrap needs at least 100 resamples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    n = dataset.n
    estimates = np.empty(b)
    redraws = 0
    draw_index = 0
    for rep in range(b):
        while True:
            gen = rngmod.child_generator(seed, "bootstrap", draw_index)
            draw_index += 1
            if stratified:
                ctrl, trt = dataset.control_idx, dataset.treated_idx
                rows = np.concatenate(
                    [
                        ctrl[gen.integers(0, ctrl.size, size=ctrl.size)],
                        trt[gen.integers(0, trt.size, size=trt.size)],
                    ]
                )
            else:
                rows = gen.integers(0, n, size=n)
            t_sub = dataset.T[rows]
            if 0 < t_sub.sum() < n:
                break
            redraws += 1
            if redraws > 10 * b:
                raise ResampleDegenerate(
                    "too many degenerate resamples; a treatment group is tiny"
                )
        resample = Dataset(
            X=dataset.X[rows],
            T=t_sub,
            Y=dataset.Y[rows],
            column_names=dataset.column_names,
        )
        child = rngmod.hash64(seed, "bootstrap", rep)
        if pass_rows:
            estimates[rep] = estimator_closure(resample, child, rows)
        else:
            estimates[rep] = estimator_closure(resample, child)
    alpha = 1.0 - level
    ci = (
        quantile_order_stat(estimates, alpha / 2.0),
        quantile_order_stat(estimates, 1.0 - alpha / 2.0),
        level,
    )
    return {"ci": ci, "bootstrap_estimates": estimates, "redraws": redraws}
