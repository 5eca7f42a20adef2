"""Cross-balancing pipelines and comparator estimators.

The two-fold scheme: learn features (or select variables) on one fold,
balance the other fold's controls to the full treated sample's feature
means, swap folds, and pool

    theta0_hat = |I_c|^-1 sum_{i in I_c} w_i Y_i,
    ATT_hat    = mean(Y | T=1) - theta0_hat.

Naive (non-split), AIPW, SBW, and oracle comparators share the same
plumbing so every roster entry sees identical folds and fitted models
for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import rng as rngmod
from .balance import BalanceProblem, BalanceSolution, solve_balance, solve_balance_nonneg
from .basis import BasisExpansion, basis_expand
from .data import Dataset
from .dgp import SyntheticDataset
from .errors import MissingOracles, NotConverged, TooFewUnits
from .inference import FoldWald, WaldArtifacts, wald_ci
from .learners import fit_prognostic, fit_propensity, make_feature_map
from .numerics import norm_ppf
from .selection import (
    SelectionSet,
    combine,
    select_lasso,
    select_stepwise_aic,
    select_ttest,
)

__all__ = [
    "Dataset",
    "FoldSplit",
    "LearnerConfig",
    "SelectionConfig",
    "DictionaryConfig",
    "EstimateReport",
    "split_folds",
    "cross_balance_learned",
    "cross_balance_selected",
    "naive_balance",
    "aipw_crossfit",
    "sbw_estimator",
    "oracle_estimators",
]


@dataclass(frozen=True)
class FoldSplit:
    """Disjoint fold indices (rows of the dataset) per treatment group."""

    control_fold_1: np.ndarray
    control_fold_2: np.ndarray
    treated_fold_1: np.ndarray
    treated_fold_2: np.ndarray
    seed: int

    def controls(self, k: int) -> np.ndarray:
        return self.control_fold_1 if k == 1 else self.control_fold_2

    def treated(self, k: int) -> np.ndarray:
        return self.treated_fold_1 if k == 1 else self.treated_fold_2

    def fold_rows(self, k: int) -> np.ndarray:
        return np.concatenate([self.controls(k), self.treated(k)])

    def swapped(self) -> "FoldSplit":
        return FoldSplit(
            self.control_fold_2,
            self.control_fold_1,
            self.treated_fold_2,
            self.treated_fold_1,
            self.seed,
        )


def split_folds(dataset: Dataset, seed: int) -> FoldSplit:
    """Uniform random halving of control and treated indices."""
    if dataset.n_c < 4 or dataset.n_t < 4:
        raise TooFewUnits("each treatment group needs at least 4 units")
    gen = rngmod.child_generator(seed, "fold-split")
    ctrl = gen.permutation(dataset.control_idx)
    trt = gen.permutation(dataset.treated_idx)
    return FoldSplit(
        control_fold_1=np.sort(ctrl[: ctrl.size // 2]),
        control_fold_2=np.sort(ctrl[ctrl.size // 2 :]),
        treated_fold_1=np.sort(trt[: trt.size // 2]),
        treated_fold_2=np.sort(trt[trt.size // 2 :]),
        seed=seed,
    )


@dataclass(frozen=True)
class LearnerConfig:
    """Which models enter the balance features."""

    prognostic: str = "ols"
    propensity: str | None = "logistic"
    include: str = "both"  # or "prognostic_only"
    clip: float = 0.01


@dataclass(frozen=True)
class SelectionConfig:
    method: str = "lasso"  # lm_ttest | stepwise_aic | lasso
    strategy: str = "union"  # union | outcome_only | propensity_only
    sigma_thresh: float | None = None
    tau_thresh: float | None = None
    nu1: float | None = None
    nu2: float | None = None
    max_steps: int | None = None


@dataclass(frozen=True)
class DictionaryConfig:
    level: str = "raw"
    knots: int = 10


@dataclass(frozen=True)
class FoldArtifact:
    fold_id: int
    feature_source: Any  # FeatureMap, SelectionSet, or tag
    balance: BalanceSolution | None
    tolerances: np.ndarray
    selection_size: int | None = None


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate, dispersion, CI, weights, and per-fold artifacts."""

    theta0_hat: float
    att_hat: float
    sigma2_hat: float
    ci: tuple[float, float, float]
    weights: np.ndarray  # aligned with dataset.control_idx
    per_fold: tuple[FoldArtifact, ...]
    method_tag: str
    diagnostics: tuple[str, ...] = field(default_factory=tuple)

    @property
    def mean_selection_size(self) -> float | None:
        sizes = [f.selection_size for f in self.per_fold if f.selection_size is not None]
        return float(np.mean(sizes)) if sizes else None


def _solve(problem: BalanceProblem, nonneg: bool, fold: int = 0) -> BalanceSolution:
    try:
        if nonneg:
            return solve_balance_nonneg(problem)
        return solve_balance(problem)
    except NotConverged as err:
        raise NotConverged(
            f"fold {fold}: {err}", best=err.best, residual=err.residual
        ) from err


def _balance_folds(
    dataset: Dataset,
    split: FoldSplit,
    feature_fn: dict[int, Callable[[np.ndarray], np.ndarray]],
    delta,
    nonneg: bool,
    level: float,
    method_tag: str,
    fold_sources: dict[int, Any],
    selection_sizes: dict[int, int] | None = None,
    diagnostics: tuple[str, ...] = (),
    standardize: bool = True,
) -> EstimateReport:
    """Shared tail of every two-fold pipeline.

    ``feature_fn[k]`` maps row indices to the fold-k feature matrix
    (fitted or selected on fold 3-k); the balance targets average the
    features over the full treated sample.
    """
    control_order = dataset.control_idx
    weights_full = np.empty(control_order.size)
    pos = {row: i for i, row in enumerate(control_order)}
    fold_artifacts = []
    wald_folds = []
    notes = list(diagnostics)
    treated_all = dataset.treated_idx
    for k in (1, 2):
        ctrl_rows = split.controls(k)
        phi_c = feature_fn[k](ctrl_rows)
        dim = phi_c.shape[1]
        tol = np.full(dim, float(delta)) if np.ndim(delta) == 0 else np.asarray(delta)
        if dim == 0:
            w = np.ones(ctrl_rows.size)
            solution = None
            notes.append(f"fold{k}:empty_selection_uniform_weights")
            phi_c_w = np.ones((ctrl_rows.size, 1))
            phi_t_w = np.ones((split.treated(k).size, 1))
        else:
            target = feature_fn[k](treated_all).mean(axis=0)
            problem = BalanceProblem(
                control_features=phi_c,
                target_means=target,
                tolerances=tol,
                nonnegative_weights=nonneg,
                standardize=standardize,
            )
            solution = _solve(problem, nonneg, fold=k)
            w = solution.weights
            phi_c_w = np.column_stack([np.ones(ctrl_rows.size), phi_c])
            phi_t_w = np.column_stack(
                [np.ones(split.treated(k).size), feature_fn[k](split.treated(k))]
            )
        for row, wi in zip(ctrl_rows, w):
            weights_full[pos[row]] = wi
        fold_artifacts.append(
            FoldArtifact(
                fold_id=k,
                feature_source=fold_sources[k],
                balance=solution,
                tolerances=tol,
                selection_size=None
                if selection_sizes is None
                else selection_sizes[k],
            )
        )
        wald_folds.append(
            FoldWald(
                phi_c=phi_c_w,
                y_c=dataset.Y[ctrl_rows],
                weights=w,
                phi_t=phi_t_w,
            )
        )
    theta0 = float(dataset.Y[control_order] @ weights_full / control_order.size)
    att = float(dataset.Y[treated_all].mean() - theta0)
    wald = wald_ci(
        WaldArtifacts(tuple(wald_folds), dataset.n_c, dataset.n_t), theta0, level
    )
    notes.extend(wald["flags"])
    return EstimateReport(
        theta0_hat=theta0,
        att_hat=att,
        sigma2_hat=wald["sigma2_hat"],
        ci=wald["ci"],
        weights=weights_full,
        per_fold=tuple(fold_artifacts),
        method_tag=method_tag,
        diagnostics=tuple(notes),
    )


def fit_fold_learners(
    dataset: Dataset, split: FoldSplit, config: LearnerConfig, seed: int
) -> dict[int, dict[str, Any]]:
    """Fit m-hat / e-hat on each fold (to be applied to the other)."""
    fits: dict[int, dict[str, Any]] = {}
    for k in (1, 2):
        train_c = split.controls(k)
        train_all = split.fold_rows(k)
        entry: dict[str, Any] = {
            "m": fit_prognostic(
                dataset.X[train_c],
                dataset.Y[train_c],
                method=config.prognostic,
                seed=rngmod.hash64(seed, "learner", 10 + k),
                fold_id=k,
            )
        }
        if config.propensity is not None and config.include == "both":
            entry["e"] = fit_propensity(
                dataset.X[train_all],
                dataset.T[train_all],
                method=config.propensity,
                clip=config.clip,
                seed=rngmod.hash64(seed, "learner", 20 + k),
                fold_id=k,
            )
        fits[k] = entry
    return fits


def cross_balance_learned(
    dataset: Dataset,
    learner_config: LearnerConfig = LearnerConfig(),
    delta=0.0,
    nonneg: bool = False,
    seed: int = 0,
    level: float = 0.95,
    split: FoldSplit | None = None,
    fits: dict | None = None,
    method_tag: str | None = None,
    delta_on_raw_scale: bool = False,
) -> EstimateReport:
    """Cross-balancing with learned feature maps.

    For fold k the features are fitted on fold 3-k, applied to fold k's
    controls, and balanced to the feature means over the full treated
    sample; the point estimate pools both folds' weighted outcomes.
    """
    split = split or split_folds(dataset, seed)
    fits = fits or fit_fold_learners(dataset, split, learner_config, seed)
    fmap = {}
    for k in (1, 2):
        trained_on = 3 - k
        models = [fits[trained_on]["m"]]
        if "e" in fits[trained_on]:
            models.append(fits[trained_on]["e"])
        fmap[k] = make_feature_map(models, include=learner_config.include)
        if fmap[k].fold_id is not None and fmap[k].fold_id != trained_on:
            raise ValueError("cross-fitting discipline violated: fold ids disagree")
    feature_fn = {k: (lambda idx, m=fmap[k]: m.apply(dataset.X[idx])) for k in (1, 2)}
    tag = method_tag or (
        "Cross_Bal" if learner_config.include == "both" else "Cross_Bal_prog"
    )
    return _balance_folds(
        dataset, split, feature_fn, delta, nonneg, level, tag,
        fold_sources={1: fmap[1], 2: fmap[2]},
        standardize=not delta_on_raw_scale,
    )


def _select_on_fold(
    dict_matrix: np.ndarray,
    dataset: Dataset,
    rows: np.ndarray,
    config: SelectionConfig,
    seed: int,
    fold_id: int,
) -> dict[str, SelectionSet]:
    x = dict_matrix[rows]
    y = dataset.Y[rows]
    t = dataset.T[rows]
    if config.method == "lm_ttest":
        return select_ttest(
            x, y, t,
            sigma_thresh=config.sigma_thresh,
            tau_thresh=config.tau_thresh,
            fold_id=fold_id,
        )
    if config.method == "stepwise_aic":
        ctrl = t == 0
        s_m = select_stepwise_aic(
            x[ctrl], y[ctrl], family="gaussian", max_steps=config.max_steps,
            source="outcome", fold_id=fold_id,
        )
        s_w = select_stepwise_aic(
            x, t.astype(np.float64), family="binomial",
            max_steps=config.max_steps, source="propensity", fold_id=fold_id,
        )
        return {"S_m": s_m, "S_w": s_w}
    if config.method == "lasso":
        return select_lasso(
            x, y, t, nu1=config.nu1, nu2=config.nu2,
            seed=rngmod.hash64(seed, "selection", fold_id), fold_id=fold_id,
        )
    raise ValueError(f"unknown selection method {config.method!r}")


def fit_fold_selections(
    dict_matrix: np.ndarray,
    dataset: Dataset,
    split: FoldSplit,
    config: SelectionConfig,
    seed: int,
) -> dict[int, dict[str, SelectionSet]]:
    """Raw per-fold selections (fitted on the fold, applied to the other)."""
    return {
        k: _select_on_fold(
            dict_matrix, dataset, split.fold_rows(k), config, seed, fold_id=k
        )
        for k in (1, 2)
    }


def cross_balance_selected(
    dataset: Dataset,
    dictionary_config: DictionaryConfig = DictionaryConfig(),
    selection_config: SelectionConfig = SelectionConfig(),
    delta: float = 0.01,
    nonneg: bool = True,
    seed: int = 0,
    level: float = 0.95,
    split: FoldSplit | None = None,
    dictionary: BasisExpansion | None = None,
    selections: dict | None = None,
    method_tag: str | None = None,
    delta_on_raw_scale: bool = False,
) -> EstimateReport:
    """Cross-balancing with selected dictionary columns.

    For fold k the selection runs on fold 3-k; fold-k controls are then
    balanced on the selected columns to the full treated means with a
    constant tolerance. An empty selection degrades to intercept-only
    balancing (uniform weights) with a diagnostic.
    """
    split = split or split_folds(dataset, seed)
    if dictionary is None:
        dictionary = basis_expand(
            dataset.X, dictionary_config.level, dictionary_config.knots
        )
    dict_matrix = dictionary.matrix
    selections = selections or fit_fold_selections(
        dict_matrix, dataset, split, selection_config, seed
    )
    chosen = {}
    for k in (1, 2):
        pair = selections[3 - k]
        sel = combine(pair["S_m"], pair["S_w"], selection_config.strategy)
        if sel.fold_id is not None and sel.fold_id != 3 - k:
            raise ValueError("cross-fitting discipline violated: fold ids disagree")
        chosen[k] = sel
    feature_fn = {
        k: (lambda idx, s=chosen[k]: dict_matrix[np.ix_(idx, s.as_array())])
        for k in (1, 2)
    }
    strategy_tag = {
        "union": "Cross_Bal",
        "outcome_only": "Outc_Only",
        "propensity_only": "Prop_Only",
    }[selection_config.strategy]
    return _balance_folds(
        dataset, split, feature_fn, delta, nonneg, level,
        method_tag or strategy_tag,
        fold_sources=chosen,
        selection_sizes={k: chosen[k].size for k in (1, 2)},
        standardize=not delta_on_raw_scale,
    )


def _single_fold_report(
    dataset: Dataset,
    phi_all_controls: np.ndarray,
    target: np.ndarray,
    phi_treated: np.ndarray,
    delta,
    nonneg: bool,
    level: float,
    method_tag: str,
    source: Any,
    selection_size: int | None = None,
) -> EstimateReport:
    """Non-split balancing (Naive and SBW variants)."""
    ctrl = dataset.control_idx
    dim = phi_all_controls.shape[1]
    tol = np.full(dim, float(delta)) if np.ndim(delta) == 0 else np.asarray(delta)
    problem = BalanceProblem(
        control_features=phi_all_controls,
        target_means=target,
        tolerances=tol,
        nonnegative_weights=nonneg,
    )
    solution = _solve(problem, nonneg)
    w = solution.weights
    theta0 = float(dataset.Y[ctrl] @ w / ctrl.size)
    att = float(dataset.Y[dataset.treated_idx].mean() - theta0)
    wald = wald_ci(
        WaldArtifacts(
            (
                FoldWald(
                    phi_c=np.column_stack([np.ones(ctrl.size), phi_all_controls]),
                    y_c=dataset.Y[ctrl],
                    weights=w,
                    phi_t=np.column_stack(
                        [np.ones(dataset.n_t), phi_treated]
                    ),
                ),
            ),
            dataset.n_c,
            dataset.n_t,
        ),
        theta0,
        level,
    )
    return EstimateReport(
        theta0_hat=theta0,
        att_hat=att,
        sigma2_hat=wald["sigma2_hat"],
        ci=wald["ci"],
        weights=w,
        per_fold=(
            FoldArtifact(
                fold_id=0,
                feature_source=source,
                balance=solution,
                tolerances=tol,
                selection_size=selection_size,
            ),
        ),
        method_tag=method_tag,
        diagnostics=tuple(wald["flags"]),
    )


def naive_balance(
    dataset: Dataset,
    learner_config: LearnerConfig = LearnerConfig(),
    delta=0.0,
    nonneg: bool = False,
    seed: int = 0,
    level: float = 0.95,
    method_tag: str | None = None,
) -> EstimateReport:
    """Non-split comparator: learners fitted on all data, one balance solve."""
    m = fit_prognostic(
        dataset.X[dataset.control_idx],
        dataset.Y[dataset.control_idx],
        method=learner_config.prognostic,
        seed=rngmod.hash64(seed, "learner", 30),
    )
    models = [m]
    if learner_config.propensity is not None and learner_config.include == "both":
        models.append(
            fit_propensity(
                dataset.X,
                dataset.T,
                method=learner_config.propensity,
                clip=learner_config.clip,
                seed=rngmod.hash64(seed, "learner", 31),
            )
        )
    fmap = make_feature_map(models, include=learner_config.include)
    phi_c = fmap.apply(dataset.X[dataset.control_idx])
    phi_t = fmap.apply(dataset.X[dataset.treated_idx])
    tag = method_tag or (
        "Naive_Bal" if learner_config.include == "both" else "Naive_Bal_prog"
    )
    return _single_fold_report(
        dataset, phi_c, phi_t.mean(axis=0), phi_t, delta, nonneg, level, tag, fmap
    )


def sbw_estimator(
    dataset: Dataset,
    dictionary_config: DictionaryConfig = DictionaryConfig(),
    delta: float = 0.01,
    nonneg: bool = True,
    level: float = 0.95,
    dictionary: BasisExpansion | None = None,
    max_relaxations: int = 12,
) -> EstimateReport:
    """Stable balancing weights over the full dictionary, no selection.

    Balancing every column of a rich dictionary at a tight tolerance with
    nonnegative weights can be infeasible; like the reference tooling's
    tolerance-grid search, the tolerance is doubled until the program is
    feasible, and the relaxation is recorded in the diagnostics.
    """
    if dictionary is None:
        dictionary = basis_expand(
            dataset.X, dictionary_config.level, dictionary_config.knots
        )
    phi_c = dictionary.matrix[dataset.control_idx]
    phi_t = dictionary.matrix[dataset.treated_idx]
    current = float(delta)
    last_err: NotConverged | None = None
    for attempt in range(max_relaxations + 1):
        try:
            report = _single_fold_report(
                dataset, phi_c, phi_t.mean(axis=0), phi_t, current, nonneg,
                level, "SBW", "full-dictionary",
                selection_size=dictionary.matrix.shape[1],
            )
        except NotConverged as err:
            last_err = err
            current *= 2.0
            continue
        if attempt:
            report = EstimateReport(
                **{
                    **report.__dict__,
                    "diagnostics": report.diagnostics
                    + (f"delta_relaxed:{delta}->{current}",),
                }
            )
        return report
    raise NotConverged(
        f"SBW infeasible up to delta={current / 2.0}",
        best=last_err.best if last_err else None,
        residual=last_err.residual if last_err else None,
    )


def aipw_crossfit(
    dataset: Dataset,
    learner_config: LearnerConfig = LearnerConfig(),
    seed: int = 0,
    level: float = 0.95,
    split: FoldSplit | None = None,
    fits: dict | None = None,
    normalize_weights: bool = True,
    method_tag: str = "AIPW",
) -> EstimateReport:
    """Cross-fitted AIPW with the same folds and models as cross-balancing.

    Preliminary weights are the fold-specific propensity odds, rescaled
    so the control-fold mean is one (Hajek), keeping the comparison with
    balancing weights meaningful under extreme propensities.
    """
    if learner_config.include != "both" or learner_config.propensity is None:
        raise ValueError("AIPW needs both an outcome and a propensity model")
    split = split or split_folds(dataset, seed)
    fits = fits or fit_fold_learners(dataset, split, learner_config, seed)
    n_c, n_t = dataset.n_c, dataset.n_t
    control_order = dataset.control_idx
    pos = {row: i for i, row in enumerate(control_order)}
    weights_full = np.empty(n_c)
    sum_c = 0.0
    sum_t = 0.0
    notes = []
    phi_contrib = np.empty(dataset.n)
    for k in (1, 2):
        trained = fits[3 - k]
        ctrl_rows, trt_rows = split.controls(k), split.treated(k)
        m_c = trained["m"].predict(dataset.X[ctrl_rows])
        m_t = trained["m"].predict(dataset.X[trt_rows])
        odds = trained["e"].odds(dataset.X[ctrl_rows])
        raw_mean = float(odds.mean())
        w = odds / raw_mean if normalize_weights else odds
        notes.append(f"fold{k}:odds_mean={raw_mean:.6g}")
        for row, wi in zip(ctrl_rows, w):
            weights_full[pos[row]] = wi
        sum_c += float(np.sum(w * (dataset.Y[ctrl_rows] - m_c)))
        sum_t += float(np.sum(m_t))
        phi_contrib[ctrl_rows] = (dataset.n / n_c) * w * (
            dataset.Y[ctrl_rows] - m_c
        )
        phi_contrib[trt_rows] = (dataset.n / n_t) * m_t
    theta0 = sum_c / n_c + sum_t / n_t
    att = float(dataset.Y[dataset.treated_idx].mean() - theta0)
    sigma2 = float(np.var(phi_contrib, ddof=1))
    z = norm_ppf(1.0 - (1.0 - level) / 2.0)
    half = z * float(np.sqrt(sigma2 / dataset.n))
    return EstimateReport(
        theta0_hat=theta0,
        att_hat=att,
        sigma2_hat=sigma2,
        ci=(theta0 - half, theta0 + half, level),
        weights=weights_full,
        per_fold=(
            FoldArtifact(1, "aipw-fold1", None, np.zeros(0)),
            FoldArtifact(2, "aipw-fold2", None, np.zeros(0)),
        ),
        method_tag=method_tag,
        diagnostics=tuple(notes),
    )


def _require_oracles(dataset: Dataset | SyntheticDataset) -> SyntheticDataset:
    if not isinstance(dataset, SyntheticDataset):
        raise MissingOracles("oracle estimators need a SyntheticDataset")
    if dataset.treat_frac is None:
        return dataset.with_calibration()
    return dataset


def oracle_estimators(
    synthetic: SyntheticDataset,
    which: str,
    delta=0.0,
    seed: int = 0,
    level: float = 0.95,
    split: FoldSplit | None = None,
    nonneg: bool = False,
) -> EstimateReport:
    """Oracle comparators with the true (m0, w*) substituted.

    ``oracle_cbal`` runs the identical two-fold balancing pipeline on
    the oracle feature values; ``oracle_aipw`` is the exactly unbiased
    plug-in of the true functions into the AIPW display.
    """
    synthetic = _require_oracles(synthetic)
    dataset = synthetic.dataset
    if which == "oracle_cbal":
        split = split or split_folds(dataset, seed)
        features = np.column_stack([synthetic.m0, synthetic.w_star])
        feature_fn = {k: (lambda idx: features[idx]) for k in (1, 2)}
        return _balance_folds(
            dataset, split, feature_fn, delta, nonneg, level, "Oracle_CBal",
            fold_sources={1: "oracle(m0,w*)", 2: "oracle(m0,w*)"},
        )
    if which == "oracle_aipw":
        ctrl, trt = dataset.control_idx, dataset.treated_idx
        w = synthetic.w_star[ctrl]
        m0c, m0t = synthetic.m0[ctrl], synthetic.m0[trt]
        theta0 = float(
            np.sum(w * (dataset.Y[ctrl] - m0c)) / ctrl.size + m0t.mean()
        )
        att = float(dataset.Y[trt].mean() - theta0)
        phi = np.empty(dataset.n)
        phi[ctrl] = (dataset.n / ctrl.size) * w * (dataset.Y[ctrl] - m0c)
        phi[trt] = (dataset.n / trt.size) * m0t
        sigma2 = float(np.var(phi, ddof=1))
        z = norm_ppf(1.0 - (1.0 - level) / 2.0)
        half = z * float(np.sqrt(sigma2 / dataset.n))
        return EstimateReport(
            theta0_hat=theta0,
            att_hat=att,
            sigma2_hat=sigma2,
            ci=(theta0 - half, theta0 + half, level),
            weights=w,
            per_fold=(FoldArtifact(0, "oracle-aipw", None, np.zeros(0)),),
            method_tag="Oracle_AIPW",
        )
    raise ValueError("which must be 'oracle_cbal' or 'oracle_aipw'")
