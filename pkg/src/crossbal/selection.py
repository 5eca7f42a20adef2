"""Data-driven selection of balance variables from a dictionary.

Three procedures are provided, matching the simulation roster: entry-wise
t-tests from a linear outcome model and an inverse-linear treatment
model (``lm_ttest``), forward stepwise regression under AIC
(``stepwise_aic``), and the Lasso (``lasso``, with the weight-side
support taken from the penalized quadratic

    lam' S_c lam - 2 lam' E_t[X] + 2 nu2 |lam|,

the same engine that solves the balancing dual). All selection operates
on column-standardized dictionaries; reported indices refer to the
original columns.

Approximation-error diagnostics estimate, by OLS projection on a fresh
reference sample from the control law, how well a selected column set
spans the true prognostic score and the true weight function; their
product is the quantity that governs the estimator's bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .lasso import lasso_cv, lasso_path
from .numerics import (
    PenalizedQuadratic,
    _chol_inverse,
    norm_ppf,
    penalized_quadratic_min,
    ridge_floor,
)

SOURCES = ("outcome", "propensity", "union")
METHODS = ("lm_ttest", "stepwise_aic", "lasso")


@dataclass(frozen=True)
class SelectionSet:
    """A sorted set of dictionary column indices with its provenance."""

    indices: tuple[int, ...]
    source: str
    method: str
    fold_id: int | None = None

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if any(i < 0 for i in idx):
            raise ValueError("indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


def _standardize(x: np.ndarray):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd <= 1e-12 * (1.0 + np.abs(mu)), 1.0, sd)
    return (x - mu) / sd


def _ridged_inverse(gram: np.ndarray) -> np.ndarray:
    d = gram.shape[0]
    return _chol_inverse(
        gram + ridge_floor(gram) * np.eye(d), check_pivots=False
    )


def default_threshold(n_c: int, alpha: float = 0.05) -> float:
    """Entry-wise t-test threshold Phi^-1(1 - alpha/2) / sqrt(n_c)."""
    return norm_ppf(1.0 - alpha / 2.0) / np.sqrt(n_c)


def select_ttest(
    x,
    y,
    t,
    sigma_thresh: float | None = None,
    tau_thresh: float | None = None,
    fold_id: int | None = None,
) -> dict[str, SelectionSet]:
    """Entry-wise t-test selection for outcome and treatment relevance.

    The outcome side tests the OLS coefficients of the control-unit
    regression with a sandwich variance; the treatment side tests the
    inverse-linear weight coefficients S_c^-1 E_t[X] with the three-term
    sandwich that includes the (n_c/n_t)-scaled treated covariance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t)
    n, p = x.shape
    if y.shape != (n,) or t.shape != (n,):
        raise DimensionMismatch("X, y, t must have matching length")
    ctrl = t == 0
    n_c, n_t = int(ctrl.sum()), int((~ctrl).sum())
    if n_c == 0 or n_t == 0:
        raise ValueError("fold must contain control and treated units")
    xs = _standardize(x)
    xc, xt = xs[ctrl], xs[~ctrl]
    yc = y[ctrl]
    if sigma_thresh is None:
        sigma_thresh = default_threshold(n_c)
    if tau_thresh is None:
        tau_thresh = default_threshold(n_c)

    gram_c = xc.T @ xc / n_c
    ginv = _ridged_inverse(gram_c)
    beta = ginv @ (xc.T @ yc / n_c)
    resid = yc - xc @ beta
    mid_beta = (xc * resid[:, None] ** 2).T @ xc / n_c
    sigma2 = np.maximum(np.diag(ginv @ mid_beta @ ginv), 1e-300)
    t_out = np.abs(beta) / np.sqrt(sigma2)

    et = xt.mean(axis=0)
    lam = ginv @ et
    s = xc @ lam
    mid_lam = (xc * s[:, None] ** 2).T @ xc / n_c
    gram_t = xt.T @ xt / n_t
    sigma_lam = (
        ginv @ mid_lam @ ginv
        - np.outer(lam, lam)
        + (n_c / n_t) * ginv @ (gram_t - np.outer(et, et)) @ ginv
    )
    tau2 = np.maximum(np.diag(sigma_lam), 1e-300)
    t_trt = np.abs(lam) / np.sqrt(tau2)

    s_m = SelectionSet(
        tuple(np.flatnonzero(t_out >= sigma_thresh)), "outcome", "lm_ttest", fold_id
    )
    s_w = SelectionSet(
        tuple(np.flatnonzero(t_trt > tau_thresh)), "propensity", "lm_ttest", fold_id
    )
    return {"S_m": s_m, "S_w": s_w}


def _stepwise_gaussian(x, y, max_steps):
    n, p = x.shape
    selected: list[int] = []
    q = np.ones((n, 1)) / np.sqrt(n)  # orthonormal basis incl. intercept
    resid = y - q @ (q.T @ y)
    residualized = x - q @ (q.T @ x)
    rss = float(resid @ resid)
    aic = n * np.log(max(rss, 1e-300) / n)  # AIC at k = 0
    remaining = np.ones(p, dtype=bool)
    while len(selected) < max_steps and rss > 1e-12 * (1.0 + y @ y):
        norms = np.sum(residualized**2, axis=0)
        gains = np.zeros(p)
        ok = remaining & (norms > 1e-12 * n)
        if not ok.any():
            break
        gains[ok] = (residualized[:, ok].T @ resid) ** 2 / norms[ok]
        j = int(np.argmax(np.where(ok, gains, -np.inf)))
        new_rss = max(rss - gains[j], 0.0)
        new_aic = n * np.log(max(new_rss, 1e-300) / n) + 2.0 * (len(selected) + 1)
        if new_aic >= aic:
            break
        qnew = residualized[:, j].copy()
        qnew /= np.linalg.norm(qnew)
        q = np.column_stack([q, qnew])
        resid = resid - qnew * (qnew @ resid)
        residualized = residualized - np.outer(qnew, qnew @ residualized)
        remaining[j] = False
        selected.append(j)
        rss = float(resid @ resid)
        aic = new_aic
    return selected


def _binomial_deviance_fit(x_sub, t, beta0, max_iter=12):
    """Logistic deviance after a short warm-started IRLS refit."""
    n = x_sub.shape[0]
    design = np.column_stack([np.ones(n), x_sub])
    beta = beta0
    for _ in range(max_iter):
        eta = np.clip(design @ beta, -30, 30)
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = design.T @ (t - prob) / n
        if np.abs(grad).max() <= 1e-8:
            break
        w = np.maximum(prob * (1.0 - prob), 1e-10)
        hess = (design * w[:, None]).T @ design / n
        hess[np.diag_indices_from(hess)] += 1e-10
        beta = beta + np.linalg.solve(hess, grad)
    eta = np.clip(design @ beta, -30, 30)
    dev = 2.0 * float(np.sum(np.log1p(np.exp(eta)) - t * eta))
    return dev, beta


def _stepwise_binomial(x, t, max_steps):
    n, p = x.shape
    selected: list[int] = []
    beta = np.array([np.log(t.mean() / (1 - t.mean()))])
    dev, _ = _binomial_deviance_fit(x[:, []], t, beta)
    aic = dev
    remaining = list(range(p))
    while len(selected) < max_steps and remaining:
        best_j, best_dev, best_beta = -1, np.inf, None
        for j in remaining:
            cols = selected + [j]
            warm = np.concatenate([beta, [0.0]])
            cand_dev, cand_beta = _binomial_deviance_fit(x[:, cols], t, warm)
            if cand_dev < best_dev - 1e-12:
                best_j, best_dev, best_beta = j, cand_dev, cand_beta
        new_aic = best_dev + 2.0 * (len(selected) + 1)
        if best_j < 0 or new_aic >= aic:
            break
        selected.append(best_j)
        remaining.remove(best_j)
        beta = best_beta
        aic = new_aic
    return selected


def select_stepwise_aic(
    x,
    response,
    family: str = "gaussian",
    max_steps: int | None = None,
    source: str = "outcome",
    fold_id: int | None = None,
) -> SelectionSet:
    """Forward stepwise selection under AIC.

    Greedy additions from the empty model; each step scans every
    remaining column (ties broken by lowest index) and stops when no
    candidate lowers AIC = n log(RSS/n) + 2k (gaussian) or
    deviance + 2k (binomial), or at ``max_steps``.
    """
    x = np.asarray(x, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    n, p = x.shape
    if response.shape != (n,):
        raise DimensionMismatch("response must match X rows")
    if family not in ("gaussian", "binomial"):
        raise ValueError("family must be gaussian or binomial")
    if family == "binomial" and not np.all(np.isin(response, (0.0, 1.0))):
        raise ValueError("binomial response must be 0/1")
    if max_steps is None:
        max_steps = min(p, n // 2)
    if max_steps == 0:
        return SelectionSet((), source, "stepwise_aic", fold_id)
    xs = _standardize(x)
    if family == "gaussian":
        chosen = _stepwise_gaussian(xs, response, max_steps)
    else:
        chosen = _stepwise_binomial(xs, response, max_steps)
    return SelectionSet(tuple(chosen), source, "stepwise_aic", fold_id)


def default_weight_penalty(n_c: int, p: int) -> float:
    """Theory-scaled default nu2 = 2 sqrt(log(2p) / n_c)."""
    return 2.0 * np.sqrt(np.log(2.0 * p) / n_c)


def select_lasso(
    x,
    y,
    t,
    nu1: float | None = None,
    nu2: float | None = None,
    seed: int = 0,
    fold_id: int | None = None,
) -> dict[str, SelectionSet]:
    """Lasso selection: outcome support and weight-objective support.

    The outcome side fits a cross-validated lasso of Y on the dictionary
    over control units (1se rule) unless ``nu1`` is given. The weight
    side minimizes the balancing-type penalized quadratic at ``nu2``
    (default 2 sqrt(log(2p)/n_c) on standardized columns).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t)
    n, p = x.shape
    ctrl = t == 0
    n_c, n_t = int(ctrl.sum()), int((~ctrl).sum())
    if n_c == 0 or n_t == 0:
        raise ValueError("fold must contain control and treated units")
    xs = _standardize(x)
    xc, xt = xs[ctrl], xs[~ctrl]
    if nu1 is not None:
        path = lasso_path(xc, y[ctrl], nus=np.array([float(nu1)]))
        support_m = np.flatnonzero(path.coefs[0] != 0.0)
    else:
        fit = lasso_cv(xc, y[ctrl], seed=seed)
        support_m = fit.support
    if nu2 is None:
        nu2 = default_weight_penalty(n_c, p)
    gram_c = xc.T @ xc / n_c
    target = xt.mean(axis=0)
    sol = penalized_quadratic_min(
        PenalizedQuadratic(gram_c, target, np.full(p, float(nu2))),
        raise_on_fail=False,
    )
    support_w = np.flatnonzero(sol.lam != 0.0)
    return {
        "S_m": SelectionSet(tuple(support_m), "outcome", "lasso", fold_id),
        "S_w": SelectionSet(tuple(support_w), "propensity", "lasso", fold_id),
    }


def combine(s_m: SelectionSet, s_w: SelectionSet, strategy: str = "union") -> SelectionSet:
    """Set algebra over the two single-source selections."""
    if strategy == "union":
        idx = set(s_m.indices) | set(s_w.indices)
        source = "union"
    elif strategy == "outcome_only":
        idx, source = set(s_m.indices), "outcome"
    elif strategy == "propensity_only":
        idx, source = set(s_w.indices), "propensity"
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    method = s_m.method if s_m.method == s_w.method else f"{s_m.method}+{s_w.method}"
    fold = s_m.fold_id if s_m.fold_id == s_w.fold_id else None
    return SelectionSet(tuple(idx), source, method, fold)


@dataclass(frozen=True)
class ApproxErrorReport:
    """Projection errors of the true score functions onto selected columns.

    ``product`` is filled when both sides are present; it equals
    epsilon_m * epsilon_w and drives the estimator's bias.
    """

    epsilon_m: float | None = None
    epsilon_w: float | None = None
    product: float | None = None
    projection_coeff_m: np.ndarray | None = None
    projection_coeff_w: np.ndarray | None = None


def _project(truth: np.ndarray, columns: np.ndarray):
    n = truth.shape[0]
    design = np.column_stack([np.ones(n), columns])
    gram = design.T @ design
    ginv = _chol_inverse(gram + ridge_floor(gram) * np.eye(gram.shape[0]), False)
    coef = ginv @ (design.T @ truth)
    resid = truth - design @ coef
    return float(np.sqrt(resid @ resid / n)), coef


def approx_error(
    selection: SelectionSet,
    truth_values,
    reference_sample,
    which: str,
) -> ApproxErrorReport:
    """Root-mean-square affine projection error of a true score.

    ``truth_values`` are oracle evaluations of m0 or w* on the reference
    sample (rows drawn from the control law); the projection uses the
    selected dictionary columns plus an intercept, realizing the
    population L2 projection error by Monte Carlo.
    """
    truth = np.asarray(truth_values, dtype=np.float64)
    ref = np.asarray(reference_sample, dtype=np.float64)
    if truth.shape[0] != ref.shape[0]:
        raise DimensionMismatch("truth and reference sample must align")
    eps, coef = _project(truth, ref[:, selection.as_array()])
    if which == "m0":
        return ApproxErrorReport(epsilon_m=eps, projection_coeff_m=coef)
    if which == "w_star":
        return ApproxErrorReport(epsilon_w=eps, projection_coeff_w=coef)
    raise ValueError("which must be 'm0' or 'w_star'")


def approx_error_pair(
    selection: SelectionSet, m0_values, wstar_values, reference_sample
) -> ApproxErrorReport:
    """Both projection errors and their product."""
    em = approx_error(selection, m0_values, reference_sample, "m0")
    ew = approx_error(selection, wstar_values, reference_sample, "w_star")
    return ApproxErrorReport(
        epsilon_m=em.epsilon_m,
        epsilon_w=ew.epsilon_w,
        product=em.epsilon_m * ew.epsilon_w,
        projection_coeff_m=em.projection_coeff_m,
        projection_coeff_w=ew.projection_coeff_w,
    )


def compatibility_diag(x_c, selection: SelectionSet) -> dict[str, float]:
    """Certified compatibility lower bound for the selected columns.

    Returns lambda_min of the selected control Gram and its |S|-scaled
    value, which bounds the compatibility function under the scaling
    xi(S) = |S|^-1 (since ||v||_1^2 <= |S| ||v||_2^2).
    """
    if selection.size == 0:
        raise ValueError("selection must be nonempty")
    x_c = np.asarray(x_c, dtype=np.float64)
    sub = x_c[:, selection.as_array()]
    gram = sub.T @ sub / x_c.shape[0]
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    return {
        "smallest_eigenvalue": lam_min,
        "xi_surrogate": lam_min / selection.size,
    }
