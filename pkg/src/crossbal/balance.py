"""Minimal-variance balancing weights and balance diagnostics.

The signed-weight program

    min sum w_i^2   s.t.  |mean_c(w * phi_k) - target_k| <= delta_k,
                          mean_c(w) = 1

is solved through its Lasso-form dual: the normalization constraint is an
appended all-ones feature with tolerance zero, and the dual coefficient
vector minimizes  lam' S lam - 2 lam' b + 2 delta' |lam|  with S the
control-fold feature covariance. The weights are the feature matrix times
the dual minimizer, so every box constraint is certified by the dual KKT
conditions.

The nonnegative variant is solved by operator splitting (ADMM) with an
active-set polish and a final KKT verification.

Features are centered and scaled by control-fold statistics before
solving, and the dual is mapped back; tolerances are interpreted on the
standardized scale unless ``standardize=False``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, NotConverged
from .numerics import CD_TOL, PenalizedQuadratic, penalized_quadratic_min

#: Tolerance used when deciding whether a polished active set is feasible.
_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class BalanceProblem:
    """One fold's balancing program.

    ``control_features`` holds the balance features evaluated on the
    control units (rows). ``target_means`` are the treated-sample feature
    means to match, and ``tolerances`` the per-feature slack. When
    ``standardize`` is true (the default), tolerances are interpreted on
    features standardized by control-fold statistics; a single constant
    tolerance is then meaningful across heterogeneous features.
    """

    control_features: np.ndarray
    target_means: np.ndarray
    tolerances: np.ndarray
    normalize: bool = True
    nonnegative_weights: bool = False
    standardize: bool = True

    def __post_init__(self):
        phi = np.asarray(self.control_features, dtype=np.float64)
        target = np.asarray(self.target_means, dtype=np.float64)
        if phi.ndim != 2:
            raise DimensionMismatch("control_features must be 2-dimensional")
        n, d = phi.shape
        if n < 2:
            raise ValueError("need at least two control units")
        tol = np.asarray(self.tolerances, dtype=np.float64)
        if tol.ndim == 0:
            tol = np.full(d, float(tol))
        if target.shape != (d,) or tol.shape != (d,):
            raise DimensionMismatch("target_means/tolerances must match features")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(target))):
            raise ValueError("features and targets must be finite")
        if tol.min(initial=0.0) < 0:
            raise ValueError("tolerances must be nonnegative")
        object.__setattr__(self, "control_features", phi)
        object.__setattr__(self, "target_means", target)
        object.__setattr__(self, "tolerances", tol)

    @property
    def n_c(self) -> int:
        return self.control_features.shape[0]

    @property
    def dim(self) -> int:
        return self.control_features.shape[1]


@dataclass(frozen=True)
class BalanceSolution:
    """Weights plus the dual certificate and diagnostics.

    ``imbalance`` is measured on the scale where the tolerances bind
    (standardized unless the problem opted out). ``dual`` is on the raw
    feature scale with the intercept multiplier first.
    """

    weights: np.ndarray
    dual: np.ndarray
    imbalance: np.ndarray
    objective: float
    kkt_residual: float
    solver_notes: tuple[str, ...] = field(default_factory=tuple)


def _standardize(problem: BalanceProblem):
    phi = problem.control_features
    notes: list[str] = []
    if not problem.standardize:
        return phi, problem.target_means, np.zeros(problem.dim), np.ones(problem.dim), notes
    mu = phi.mean(axis=0)
    sd = phi.std(axis=0)
    dead = sd <= 1e-12 * (1.0 + np.abs(mu))
    if np.any(dead):
        notes.append(f"constant_features:{np.flatnonzero(dead).tolist()}")
        sd = np.where(dead, 1.0, sd)
    return (phi - mu) / sd, (problem.target_means - mu) / sd, mu, sd, notes


def _augment(phi_std: np.ndarray, target_std: np.ndarray, tol: np.ndarray):
    """Append the intercept feature implementing mean(w) = 1."""
    n = phi_std.shape[0]
    phi_aug = np.column_stack([np.ones(n), phi_std])
    b = np.concatenate([[1.0], target_std])
    delta = np.concatenate([[0.0], tol])
    return phi_aug, b, delta


def _map_dual_back(lam_aug: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    dual = np.empty_like(lam_aug)
    dual[1:] = lam_aug[1:] / sd
    dual[0] = lam_aug[0] - np.sum(lam_aug[1:] * mu / sd)
    return dual


def solve_balance(problem: BalanceProblem, tol: float = CD_TOL) -> BalanceSolution:
    """Solve the signed-weight program through its dual.

    With the intercept device the program is always feasible: uniform
    weights satisfy normalization, and the dual KKT conditions certify
    every box constraint to within the solver tolerance.
    """
    if problem.nonnegative_weights:
        raise ValueError("use solve_balance_nonneg for nonnegative weights")
    if not problem.normalize:
        raise ValueError("the balancing program requires mean-one normalization")
    phi_std, target_std, mu, sd, notes = _standardize(problem)
    phi_aug, b, delta = _augment(phi_std, target_std, problem.tolerances)
    n, d1 = phi_aug.shape
    if n < d1:
        notes.append("degenerate_fold:n_c<dim")
    gram = phi_aug.T @ phi_aug / n
    pq = PenalizedQuadratic(gram, b, delta)
    try:
        sol = penalized_quadratic_min(pq, tol=tol)
    except NotConverged as err:
        sol = err.best
        notes.append(f"not_converged:kkt={err.residual:.3e}")
    weights = phi_aug @ sol.lam
    imbalance_vec = phi_aug.T @ weights / n - b
    return BalanceSolution(
        weights=weights,
        dual=_map_dual_back(sol.lam, mu, sd),
        imbalance=imbalance_vec[1:],
        objective=float(weights @ weights),
        kkt_residual=sol.kkt_residual,
        solver_notes=tuple(notes),
    )


def imbalance(weights, control_features, target_means) -> np.ndarray:
    """Weighted control feature means minus targets, exactly as computed."""
    weights = np.asarray(weights, dtype=np.float64)
    phi = np.asarray(control_features, dtype=np.float64)
    target = np.asarray(target_means, dtype=np.float64)
    if phi.ndim != 2 or weights.shape != (phi.shape[0],) or target.shape != (phi.shape[1],):
        raise DimensionMismatch("weights/features/targets do not conform")
    return phi.T @ weights / phi.shape[0] - target


# ---------------------------------------------------------------------------
# Nonnegative weights: ADMM with active-set polish
# ---------------------------------------------------------------------------


class _WoodburySolver:
    """Applies (alpha I + beta Phi Phi')^-1 through a (d+1)-dim Cholesky."""

    def __init__(self, phi: np.ndarray, alpha: float, beta: float):
        self.phi = phi
        self.alpha = alpha
        d = phi.shape[1]
        k = (alpha / beta) * np.eye(d) + phi.T @ phi
        self.chol = np.linalg.cholesky(k)

    def apply(self, v: np.ndarray) -> np.ndarray:
        rhs = self.phi.T @ v
        y = np.linalg.solve(self.chol, rhs)
        y = np.linalg.solve(self.chol.T, y)
        return (v - self.phi @ y) / self.alpha


def _admm_nonneg(phi, lo, hi, tol, max_iter):
    """ADMM for min ||w||^2 s.t. w >= 0, Phi'w/n in [lo, hi].

    The constraint block is scaled to Phi'w/sqrt(n) (unit-norm rows for
    standardized features) so both splitting blocks see comparable
    residuals; updates use over-relaxation. Iterations stop early when
    the primal residual stalls, which signals an infeasible program.
    """
    n, d = phi.shape
    root = np.sqrt(n)
    slo, shi = lo * root, hi * root  # bounds for Phi'w/sqrt(n)
    rho = 1.0
    relax = 1.7
    solver = _WoodburySolver(phi, 2.0 + rho, rho / n)
    w = np.ones(n)
    zw = w.copy()
    zc = np.clip(phi.T @ w / root, slo, shi)
    uw = np.zeros(n)
    uc = np.zeros(d)
    best_violation = np.inf
    best_zw = zw.copy()
    stall = 0
    r_pri = np.inf
    for it in range(max_iter):
        rhs = rho * (zw - uw) + (rho / root) * (phi @ (zc - uc))
        w = solver.apply(rhs)
        mw = phi.T @ w / root
        w_h = relax * w + (1.0 - relax) * zw
        mw_h = relax * mw + (1.0 - relax) * zc
        zw_new = np.maximum(w_h + uw, 0.0)
        zc_new = np.clip(mw_h + uc, slo, shi)
        s_dual = rho * np.sqrt(
            np.sum((zw_new - zw) ** 2) + np.sum((phi @ (zc_new - zc) / root) ** 2)
        )
        zw, zc = zw_new, zc_new
        uw += w_h - zw
        uc += mw_h - zc
        r_pri = np.sqrt(np.sum((w - zw) ** 2) + np.sum((mw - zc) ** 2))
        norm_pri = max(np.linalg.norm(w), np.linalg.norm(zw) + np.linalg.norm(zc), 1.0)
        if r_pri <= tol * norm_pri and s_dual <= tol * max(rho, 1.0) * norm_pri:
            return zw, it + 1, True, r_pri
        # stall detection: an infeasible program leaves a persistent gap
        if it % 50 == 49:
            mw_z = phi.T @ zw / n
            violation = float(
                max((lo - mw_z).max(initial=0.0), (mw_z - hi).max(initial=0.0))
            )
            if violation >= best_violation - 1e-12:
                stall += 1
                if stall >= 20 and best_violation > 10.0 * tol:
                    return best_zw, it + 1, False, best_violation
            else:
                best_violation = violation
                best_zw = zw.copy()
                stall = 0
        if it % 10 == 9:
            if r_pri > 10.0 * s_dual:
                rho *= 2.0
                uw /= 2.0
                uc /= 2.0
                solver = _WoodburySolver(phi, 2.0 + rho, rho / n)
            elif s_dual > 10.0 * r_pri:
                rho /= 2.0
                uw *= 2.0
                uc *= 2.0
                solver = _WoodburySolver(phi, 2.0 + rho, rho / n)
    return zw, max_iter, False, r_pri


def _polish_nonneg(phi, lo, hi, w0, rounds: int = 30):
    """Active-set refinement seeded by the ADMM iterate.

    Solves the equality-restricted minimum-norm problem on the detected
    active set, then adjusts the set until primal feasibility and KKT
    multiplier signs hold. Returns (w, kkt_residual) or None.
    """
    n, d = phi.shape
    mw = phi.T @ w0 / n
    scale = max(1.0, float(np.abs(w0).max(initial=0.0)))
    zero = w0 <= 1e-6 * scale
    span = np.maximum(hi - lo, 1e-30)
    at_up = (hi - mw) <= 1e-6 * np.maximum(1.0, np.abs(hi)) + 1e-9
    at_lo = (mw - lo) <= 1e-6 * np.maximum(1.0, np.abs(lo)) + 1e-9
    binding = np.where(at_up & at_lo, 0, np.where(at_up, 1, np.where(at_lo, -1, 0)))
    binding[span <= 1e-12] = 2  # equality rows (intercept) always bind

    for _ in range(rounds):
        bind_idx = np.flatnonzero(binding != 0)
        g = np.where(binding[bind_idx] == 1, hi[bind_idx], lo[bind_idx])
        g = np.where(binding[bind_idx] == 2, hi[bind_idx], g)
        free = ~zero
        c = phi[np.ix_(free, bind_idx)]
        w = np.zeros(n)
        if bind_idx.size:
            sol, *_ = np.linalg.lstsq(c.T, n * g, rcond=None)
            w[free] = sol
            mu, *_ = np.linalg.lstsq(c / n, 2.0 * w[free], rcond=None)
        else:
            mu = np.zeros(0)
        mw = phi.T @ w / n
        # primal violations
        neg = np.flatnonzero(w < -_FEAS_TOL)
        over = np.flatnonzero(mw > hi + _FEAS_TOL)
        under = np.flatnonzero(mw < lo - _FEAS_TOL)
        # multiplier sign violations
        mu_full = np.zeros(d)
        mu_full[bind_idx] = mu
        zeta = 2.0 * w - phi @ mu_full / n
        wrong_zeta = np.flatnonzero(zero & (zeta < -1e-8))
        wrong_up = bind_idx[(binding[bind_idx] == 1) & (mu > 1e-8)]
        wrong_lo = bind_idx[(binding[bind_idx] == -1) & (mu < -1e-8)]
        if not (len(neg) or len(over) or len(under) or len(wrong_zeta) or len(wrong_up) or len(wrong_lo)):
            kkt = float(
                max(
                    np.abs(np.where(free, zeta, 0.0)).max(initial=0.0),
                    (lo - mw).max(initial=0.0),
                    (mw - hi).max(initial=0.0),
                    (-w).max(initial=0.0),
                )
            )
            return w, kkt
        zero[neg] = True
        binding[over] = 1
        binding[under] = -1
        zero[wrong_zeta] = False
        binding[wrong_up] = np.where(binding[wrong_up] == 2, 2, 0)
        binding[wrong_lo] = np.where(binding[wrong_lo] == 2, 2, 0)
    return None


def solve_balance_nonneg(
    problem: BalanceProblem, tol: float = 1e-8, max_iter: int = 20_000
) -> BalanceSolution:
    """Nonnegative-weight variant of the balancing program.

    Unlike the signed program, a tiny tolerance can be genuinely
    infeasible; in that case the solver raises NotConverged carrying the
    minimal achieved violation instead of silently relaxing delta.
    """
    if not problem.nonnegative_weights:
        raise ValueError("problem must set nonnegative_weights=True")
    phi_std, target_std, mu, sd, notes = _standardize(problem)
    phi_aug, b, delta = _augment(phi_std, target_std, problem.tolerances)
    n, d1 = phi_aug.shape
    if n < d1:
        notes.append("degenerate_fold:n_c<dim")
    lo, hi = b - delta, b + delta
    w, iters, converged, resid = _admm_nonneg(phi_aug, lo, hi, tol, max_iter)
    polished = _polish_nonneg(phi_aug, lo, hi, w)
    if polished is not None:
        w, kkt = polished
        notes.append(f"admm_iters:{iters},polished")
    else:
        mw = phi_aug.T @ w / n
        kkt = float(max((lo - mw).max(initial=0.0), (mw - hi).max(initial=0.0), resid))
        notes.append(f"admm_iters:{iters},polish_failed")
    imbalance_vec = phi_aug.T @ w / n - b
    solution = BalanceSolution(
        weights=w,
        dual=np.full(d1, np.nan),
        imbalance=imbalance_vec[1:],
        objective=float(w @ w),
        kkt_residual=kkt,
        solver_notes=tuple(notes),
    )
    violation = float(
        max(
            np.abs(imbalance_vec[0]),
            (np.abs(imbalance_vec[1:]) - delta[1:]).max(initial=0.0),
            (-w).max(initial=0.0),
        )
    )
    if not converged and polished is None:
        raise NotConverged(
            f"nonnegative balance solver stalled; min achieved violation {violation:.3e}",
            best=solution,
            residual=violation,
        )
    if violation > 1e-6:
        raise NotConverged(
            f"balance constraints unattained (likely infeasible); violation {violation:.3e}",
            best=solution,
            residual=violation,
        )
    return solution


# ---------------------------------------------------------------------------
# Standardized mean differences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmdRow:
    index: int
    name: str
    mean_treated: float
    mean_control: float
    pooled_sd: float
    smd: float
    degenerate: bool = False


def smd_report(
    dataset: Dataset,
    feature_matrix: np.ndarray,
    weights: np.ndarray | None = None,
    names: list[str] | None = None,
) -> list[SmdRow]:
    """Per-feature standardized mean differences, optionally weighted.

    SMD_k = (treated mean - weighted control mean) / pooled SD, with the
    pooled SD computed from unweighted group variances. Zero-variance
    columns are reported with SMD 0 and flagged instead of failing.
    """
    phi = np.asarray(feature_matrix, dtype=np.float64)
    if phi.shape[0] != dataset.n:
        raise DimensionMismatch("feature_matrix must align with dataset rows")
    ctrl, trt = dataset.control_idx, dataset.treated_idx
    if weights is None:
        weights = np.ones(ctrl.size)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (ctrl.size,):
        raise DimensionMismatch("weights must align with control rows")
    rows = []
    wsum = weights.sum()
    for k in range(phi.shape[1]):
        col_t, col_c = phi[trt, k], phi[ctrl, k]
        mean_t = float(col_t.mean())
        mean_c = float(col_c @ weights / wsum) if wsum != 0 else float("nan")
        var_t = float(col_t.var(ddof=1)) if col_t.size > 1 else 0.0
        var_c = float(col_c.var(ddof=1)) if col_c.size > 1 else 0.0
        pooled = float(np.sqrt((var_t + var_c) / 2.0))
        degenerate = pooled <= 0.0
        smd = 0.0 if degenerate else (mean_t - mean_c) / pooled
        name = names[k] if names else (
            dataset.column_names[k]
            if dataset.column_names and k < len(dataset.column_names)
            else f"x{k + 1}"
        )
        rows.append(SmdRow(k, name, mean_t, mean_c, pooled, smd, degenerate))
    return rows
