"""Dense linear algebra and penalized quadratic minimization.

These kernels back the balance solver, the Lasso learners, and the
selection procedures. Everything here is pure: inputs are never mutated
and results are plain values, so calls are safe to run concurrently.

The central object is the penalized quadratic

    F(lam) = lam' G lam - 2 lam' c + 2 nu' |lam|,

minimized by cyclic coordinate descent with closed-form soft-threshold
updates. The balancing dual, the outcome Lasso, and the weight Lasso are
all instances of this problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NotConverged, NotPositiveDefinite

#: Relative ridge added to Gram diagonals so numerically singular
#: covariances survive factorization and coordinate descent.
RIDGE_REL = 1e-10

#: Default coordinate-descent tolerance (max coordinate change per sweep,
#: relative to 1 + ||lam||_inf).
CD_TOL = 1e-8

#: Default sweep cap is 100 * dimension.
CD_SWEEPS_PER_DIM = 100


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _as_vector(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


# Acklam's rational approximation of the standard normal inverse CDF
# (|relative error| < 1.15e-9), sharpened to machine precision by one
# Halley step. Constants are pinned so streams reproduce across ports.
_PPF_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_PPF_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_PPF_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_PPF_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def norm_ppf(q: float) -> float:
    """Standard normal quantile (documented rational approximation)."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    p_low = 0.02425
    if q < p_low:
        u = np.sqrt(-2.0 * np.log(q))
        x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) / (
            (((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0
        )
    elif q <= 1.0 - p_low:
        u = q - 0.5
        r = u * u
        x = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * u
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        u = np.sqrt(-2.0 * np.log(1.0 - q))
        x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) / (
            (((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0
        )
    # one Halley refinement using the exact CDF via erfc
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return float(x - u / (1.0 + 0.5 * x * u)) if pdf > 0 else float(x)


def ridge_floor(gram: np.ndarray) -> float:
    """Diagonal ridge used throughout: RIDGE_REL * trace(G) / d."""
    d = gram.shape[0]
    tr = float(np.trace(gram))
    return RIDGE_REL * max(tr / max(d, 1), 1e-12)


def solve_spd(a, b) -> np.ndarray:
    """Solve A x = b for symmetric positive-definite A via Cholesky.

    Raises
    ------
    NotPositiveDefinite
        If a Cholesky pivot falls at or below the ridge floor.
    DimensionMismatch
        If A is not square or does not conform with b.
    """
    a = _as_matrix(a, "A")
    b = _as_vector(b, "b")
    n, m = a.shape
    if n != m:
        raise DimensionMismatch(f"A must be square, got {a.shape}")
    if b.shape[0] != n:
        raise DimensionMismatch(f"b has length {b.shape[0]}, expected {n}")
    scale = 1.0 + float(np.abs(a).max(initial=0.0))
    if float(np.abs(a - a.T).max(initial=0.0)) > 1e-10 * scale:
        raise NotPositiveDefinite("matrix is not symmetric within tolerance")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization failed") from exc
    floor = ridge_floor(a)
    if float(np.min(np.diag(chol)) ** 2) <= floor:
        raise NotPositiveDefinite("Cholesky pivot at or below the ridge floor")
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


@dataclass(frozen=True)
class OlsFit:
    """Least squares fit. With an intercept, it is the first coefficient."""

    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    gram_inverse: np.ndarray
    add_intercept: bool
    diagnostics: tuple[str, ...] = ()

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.add_intercept:
            return self.coefficients[0] + x @ self.coefficients[1:]
        return x @ self.coefficients


def ols_fit(x, y, add_intercept: bool = False) -> OlsFit:
    """Ordinary least squares with a ridge floor instead of a rank error.

    Rank-deficient designs proceed with the diagonal ridge and are flagged
    in ``diagnostics`` because selection feeds possibly collinear bases.
    """
    x = _as_matrix(x, "X")
    y = _as_vector(y, "y")
    n, d = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"y has length {y.shape[0]}, expected {n}")
    design = np.column_stack([np.ones(n), x]) if add_intercept else x
    gram = design.T @ design
    notes: list[str] = []
    try:
        ginv = _chol_inverse(gram)
    except NotPositiveDefinite:
        ridge = ridge_floor(gram)
        k = gram.shape[0]
        for _ in range(8):
            try:
                ginv = _chol_inverse(gram + ridge * np.eye(k), check_pivots=False)
                break
            except NotPositiveDefinite:
                ridge *= 10.0
        else:
            raise
        notes.append(f"ridge_floor:{ridge:.3e}")
    coef = ginv @ (design.T @ y)
    fitted = design @ coef
    return OlsFit(
        coefficients=coef,
        fitted=fitted,
        residuals=y - fitted,
        gram_inverse=ginv,
        add_intercept=add_intercept,
        diagnostics=tuple(notes),
    )


def _chol_inverse(a: np.ndarray, check_pivots: bool = True) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization failed") from exc
    if check_pivots and float(np.min(np.diag(chol)) ** 2) <= ridge_floor(a):
        raise NotPositiveDefinite("Cholesky pivot at or below the ridge floor")
    ident = np.eye(a.shape[0])
    linv = np.linalg.solve(chol, ident)
    return linv.T @ linv


@dataclass(frozen=True)
class PenalizedQuadratic:
    """Data of min lam' G lam - 2 lam' c + 2 nu' |lam|.

    ``nonnegative`` marks coordinates constrained to lam_j >= 0; the other
    coordinates are free.
    """

    gram: np.ndarray
    linear: np.ndarray
    penalty: np.ndarray
    nonnegative: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        gram = _as_matrix(self.gram, "gram")
        linear = _as_vector(self.linear, "linear")
        penalty = _as_vector(self.penalty, "penalty")
        d = gram.shape[0]
        if gram.shape[1] != d:
            raise DimensionMismatch("gram must be square")
        if linear.shape[0] != d or penalty.shape[0] != d:
            raise DimensionMismatch("linear/penalty must match gram dimension")
        scale = 1.0 + float(np.abs(gram).max(initial=0.0))
        if float(np.abs(gram - gram.T).max(initial=0.0)) > 1e-10 * scale:
            raise ValueError("gram is not symmetric within 1e-10 relative")
        if penalty.min(initial=0.0) < 0:
            raise ValueError("penalty entries must be nonnegative")
        nonneg = self.nonnegative
        if nonneg is None:
            nonneg = np.zeros(d, dtype=np.bool_)
        else:
            nonneg = np.asarray(nonneg, dtype=np.bool_)
            if nonneg.shape != (d,):
                raise DimensionMismatch("nonnegative mask must match dimension")
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "penalty", penalty)
        object.__setattr__(self, "nonnegative", nonneg)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    def objective(self, lam: np.ndarray) -> float:
        lam = np.asarray(lam, dtype=np.float64)
        return float(
            lam @ self.gram @ lam
            - 2.0 * lam @ self.linear
            + 2.0 * self.penalty @ np.abs(lam)
        )


@dataclass(frozen=True)
class PqSolution:
    lam: np.ndarray
    kkt_residual: float
    iterations: int
    ridge: float
    objective_trace: tuple[float, ...] = ()


@njit(cache=True)
def _cd_kernel(gram, c, nu, nonneg, lam, z, tol, max_sweeps):  # pragma: no cover
    d = gram.shape[0]
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        linf = 0.0
        for j in range(d):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            target = c[j] - (z[j] - gjj * lam[j])
            if nonneg[j]:
                new = target - nu[j]
                new = new / gjj if new > 0.0 else 0.0
            else:
                mag = abs(target) - nu[j]
                if mag > 0.0:
                    new = mag / gjj if target > 0.0 else -mag / gjj
                else:
                    new = 0.0
            delta = new - lam[j]
            if delta != 0.0:
                for k in range(d):
                    z[k] += gram[k, j] * delta
                lam[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
            if abs(lam[j]) > linf:
                linf = abs(lam[j])
        if max_change <= tol * (1.0 + linf):
            converged = True
            break
    return sweeps, converged


def kkt_residual(p: PenalizedQuadratic, lam: np.ndarray, ridge: float = 0.0) -> float:
    """Max subgradient violation of the penalized quadratic at ``lam``."""
    lam = np.asarray(lam, dtype=np.float64)
    grad: np.ndarray = 2.0 * (p.gram @ lam - p.linear)
    if ridge:
        grad = grad + 2.0 * ridge * lam
    worst = 0.0
    for j in range(p.dim):
        g, v, nn = grad[j], p.penalty[j], p.nonnegative[j]
        if nn:
            res = abs(g + 2.0 * v) if lam[j] > 0 else max(0.0, -(g + 2.0 * v))
        elif lam[j] != 0.0:
            res = abs(g + 2.0 * v * np.sign(lam[j]))
        else:
            res = max(0.0, abs(g) - 2.0 * v)
        worst = max(worst, res)
    return float(worst)


def penalized_quadratic_min(
    p: PenalizedQuadratic,
    tol: float = CD_TOL,
    max_iter: int | None = None,
    warm_start: np.ndarray | None = None,
    trace_objective: bool = False,
    raise_on_fail: bool = True,
) -> PqSolution:
    """Minimize a penalized quadratic by cyclic coordinate descent.

    Convergence is declared when the max coordinate change in a sweep is
    at most ``tol * (1 + ||lam||_inf)``. The Gram diagonal receives the
    ridge floor before descent; the applied value is reported.

    Parameters
    ----------
    p : PenalizedQuadratic
        Problem data.
    tol : float
        Coordinate-change tolerance.
    max_iter : int, optional
        Sweep cap; defaults to 100 * dimension.
    warm_start : ndarray, optional
        Starting point (copied, not mutated).
    trace_objective : bool
        Record the objective after every sweep (slow; for tests).
    raise_on_fail : bool
        Raise NotConverged at the cap instead of returning the best iterate.

    Raises
    ------
    NotConverged
        Carrying the best iterate and its KKT residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = p.dim
    if max_iter is None:
        max_iter = CD_SWEEPS_PER_DIM * d
    ridge = ridge_floor(p.gram)
    gram = p.gram + ridge * np.eye(d)
    lam = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=np.float64)
    z = gram @ lam
    trace: list[float] = []
    if trace_objective:
        total = 0
        converged = False
        while total < max_iter:
            done, converged = _cd_kernel(
                gram, p.linear, p.penalty, p.nonnegative, lam, z, tol, 1
            )
            total += done
            trace.append(p.objective(lam))
            if converged:
                break
        sweeps = total
    else:
        sweeps, converged = _cd_kernel(
            gram, p.linear, p.penalty, p.nonnegative, lam, z, tol, max_iter
        )
    residual = kkt_residual(p, lam, ridge=ridge)
    if not converged and raise_on_fail:
        raise NotConverged(
            f"coordinate descent hit the sweep cap ({max_iter})",
            best=PqSolution(lam, residual, sweeps, ridge, tuple(trace)),
            residual=residual,
        )
    return PqSolution(lam, residual, sweeps, ridge, tuple(trace))
