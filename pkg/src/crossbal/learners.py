"""Prognostic and propensity learners exposed as applicable feature maps.

Models are fitted on one fold and applied to the other by the estimator;
every fitted object records the fold it was trained on so the pipeline
can assert cross-fitting discipline. Fitted models are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import rng as rngmod
from .errors import DimensionMismatch, EmptyComponents
from .lasso import CvLassoFit, lasso_cv, logistic_lasso_cv
from .numerics import OlsFit, ols_fit

PROGNOSTIC_METHODS = ("ols", "lasso_cv", "forest")
PROPENSITY_METHODS = ("logistic", "logistic_lasso_cv", "forest")

#: Default probability clip. The Kang-Schafer design produces extreme
#: propensity scores, so an explicit reported clip keeps weights finite.
DEFAULT_CLIP = 0.01

FOREST_DEFAULTS = {
    "n_estimators": 200,
    "max_depth": 12,
    "min_samples_leaf": 5,
}


def fit_forest(x, y_or_t, task: str, hyper: dict | None = None, seed: int = 0):
    """Random forest wrapper (scikit-learn backend), deterministic by seed.

    ``task`` is "regression" or "probability". Feature subsampling
    defaults to ceil(d/3) for regression and ceil(sqrt(d)) for
    probability, with bootstrap row sampling.
    """
    from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("X must be 2-dimensional")
    n, d = x.shape
    if n < 20:
        raise ValueError("forest fitting requires n >= 20")
    params = dict(FOREST_DEFAULTS)
    if task == "regression":
        params["max_features"] = int(np.ceil(d / 3))
        cls = RandomForestRegressor
    elif task == "probability":
        params["max_features"] = int(np.ceil(np.sqrt(d)))
        cls = RandomForestClassifier
    else:
        raise ValueError(f"unknown forest task {task!r}")
    if hyper:
        params.update(hyper)
    model = cls(
        **params,
        bootstrap=True,
        random_state=rngmod.sklearn_seed(seed, "forest-tree"),
        n_jobs=1,
    )
    model.fit(x, np.asarray(y_or_t))
    return model


@dataclass(frozen=True)
class RegressionModel:
    """Fitted prognostic-score model m-hat."""

    method: str
    state: Any
    fold_id: int | None = None
    training_summary: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.method == "constant":
            return np.full(x.shape[0], float(self.state))
        if self.method == "ols":
            return self.state.predict(x)
        if self.method == "lasso_cv":
            return self.state.predict(x)
        if self.method == "forest":
            return self.state.predict(x)
        raise ValueError(f"unknown method {self.method!r}")


def fit_prognostic(
    x_c, y_c, method: str = "ols", seed: int = 0, fold_id: int | None = None
) -> RegressionModel:
    """Fit m-hat on control rows of one fold.

    A constant outcome degenerates to a constant predictor with a flag
    rather than an error, since downstream balancing still works.
    """
    x_c = np.asarray(x_c, dtype=np.float64)
    y_c = np.asarray(y_c, dtype=np.float64)
    if x_c.shape[0] != y_c.shape[0]:
        raise DimensionMismatch("X and y must have equal length")
    summary = {"n": x_c.shape[0], "d": x_c.shape[1]}
    if np.ptp(y_c) == 0.0:
        return RegressionModel(
            "constant", float(y_c[0]), fold_id, summary, flags=("degenerate_outcome",)
        )
    if method == "ols":
        state: Any = ols_fit(x_c, y_c, add_intercept=True)
    elif method == "lasso_cv":
        state = lasso_cv(x_c, y_c, seed=rngmod.hash64(seed, "learner", 0))
        summary["cv_curve"] = (state.path.nus, state.cv_mean, state.cv_se)
        summary["nu_1se"] = state.nu
    elif method == "forest":
        state = fit_forest(x_c, y_c, "regression", seed=seed)
    else:
        raise ValueError(f"unknown prognostic method {method!r}")
    return RegressionModel(method, state, fold_id, summary)


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray  # intercept first
    converged: bool
    iterations: int
    grad_norm: float
    saturated: bool = False

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        eta = self.coefficients[0] + x @ self.coefficients[1:]
        return 1.0 / (1.0 + np.exp(-np.clip(eta, -30, 30)))


def _logistic_irls(x, t, max_iter: int = 100, grad_tol: float = 1e-8) -> LogisticFit:
    n = x.shape[0]
    design = np.column_stack([np.ones(n), x])
    beta = np.zeros(design.shape[1])
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        raw_eta = design @ beta
        eta = np.clip(raw_eta, -30, 30)
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = design.T @ (t - prob) / n
        grad_norm = float(np.abs(grad).max())
        if grad_norm <= grad_tol:
            saturated = float(np.abs(raw_eta).max(initial=0.0)) >= 25.0
            return LogisticFit(beta, True, it, grad_norm, saturated)
        w = np.maximum(prob * (1.0 - prob), 1e-10)
        hess = (design * w[:, None]).T @ design / n
        hess[np.diag_indices_from(hess)] += 1e-12
        step = np.linalg.solve(hess, grad)
        # step halving keeps the deviance from blowing up under separation
        dev = _deviance(design, beta, t)
        scale = 1.0
        for _ in range(20):
            cand = beta + scale * step
            if _deviance(design, cand, t) <= dev + 1e-12:
                break
            scale /= 2.0
        beta = beta + scale * step
    return LogisticFit(beta, False, it, grad_norm, True)


def _deviance(design, beta, t):
    eta = np.clip(design @ beta, -30, 30)
    return float(2.0 * np.sum(np.log1p(np.exp(eta)) - t * eta))


@dataclass(frozen=True)
class PropensityModel:
    """Fitted propensity model e-hat with probability clipping."""

    method: str
    state: Any
    clip: float = DEFAULT_CLIP
    fold_id: int | None = None
    flags: tuple[str, ...] = ()

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.method == "logistic":
            p = self.state.predict_proba(x)
        elif self.method == "logistic_lasso_cv":
            p = self.state.predict(x)
        elif self.method == "forest":
            p = self.state.predict_proba(x)[:, 1]
        elif self.method == "oracle":
            p = self.state(x)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return np.clip(p, self.clip, 1.0 - self.clip)

    def odds(self, x) -> np.ndarray:
        p = self.predict_proba(x)
        return p / (1.0 - p)


def fit_propensity(
    x,
    t,
    method: str = "logistic",
    clip: float = DEFAULT_CLIP,
    seed: int = 0,
    fold_id: int | None = None,
) -> PropensityModel:
    """Fit e-hat on all rows of one fold.

    Separable data is not fatal: the fit is flagged and predictions
    saturate at the clip bounds.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x.shape[0] != t.shape[0]:
        raise DimensionMismatch("X and t must have equal length")
    if not 0.0 < clip < 0.5:
        raise ValueError("clip must lie in (0, 0.5)")
    if np.unique(t).size < 2:
        raise ValueError("both classes must be present")
    flags: tuple[str, ...] = ()
    if method == "logistic":
        state: Any = _logistic_irls(x, t)
        if not state.converged or state.saturated:
            flags = ("converged_by_clipping",)
    elif method == "logistic_lasso_cv":
        state = logistic_lasso_cv(x, t, seed=rngmod.hash64(seed, "learner", 1))
    elif method == "forest":
        state = fit_forest(x, t.astype(int), "probability", seed=seed)
    else:
        raise ValueError(f"unknown propensity method {method!r}")
    return PropensityModel(method, state, clip, fold_id, flags)


@dataclass(frozen=True)
class FeatureMap:
    """Fitted transformation x -> phi-hat(x) built from model components.

    Propensity components enter as the odds e/(1-e); the constant factor
    P(T=0)/P(T=1) is omitted since features enter a linear span.
    """

    components: tuple
    fold_id: int | None = None

    @property
    def output_dim(self) -> int:
        return len(self.components)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cols = []
        for kind, model in self.components:
            if kind == "prognostic":
                cols.append(model.predict(x))
            elif kind == "propensity_odds":
                cols.append(model.odds(x))
            else:
                raise ValueError(f"unknown component kind {kind!r}")
        return np.column_stack(cols)


def make_feature_map(models: list, include: str = "both") -> FeatureMap:
    """Assemble a FeatureMap from fitted models.

    ``include`` is one of "prognostic_only", "both", "stacked_multi".
    For "stacked_multi" every given model enters in order, so several
    candidate outcome and propensity models can be stacked.
    """
    regressions = [m for m in models if isinstance(m, RegressionModel)]
    propensities = [m for m in models if isinstance(m, PropensityModel)]
    if include == "prognostic_only":
        chosen = [("prognostic", m) for m in regressions]
    elif include == "both":
        chosen = [("prognostic", m) for m in regressions] + [
            ("propensity_odds", m) for m in propensities
        ]
    elif include == "stacked_multi":
        chosen = [
            ("prognostic", m)
            if isinstance(m, RegressionModel)
            else ("propensity_odds", m)
            for m in models
        ]
    else:
        raise ValueError(f"unknown include mode {include!r}")
    if not chosen:
        raise EmptyComponents("feature map needs at least one fitted model")
    fold_ids = {m.fold_id for _, m in chosen if m.fold_id is not None}
    if len(fold_ids) > 1:
        raise ValueError("all components must be fitted on the same fold")
    fold_id = fold_ids.pop() if fold_ids else None
    return FeatureMap(components=tuple(chosen), fold_id=fold_id)
