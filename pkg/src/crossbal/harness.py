"""Monte Carlo simulation runner and metric aggregation.

Repetition r draws its dataset with the derived seed (master, "rep", r);
every estimator in the roster sees the same dataset within a repetition
and shares the fold split, fitted learners, and selections. Because all
randomness flows through per-repetition derived seeds, results are
bit-identical at any worker count.

Outputs follow a fixed schema: ``metrics.csv`` has one row per
(estimator, ci_method) with bias / sd / rmse / coverage / mean CI length
/ mean selection size / approximation-error diagnostics / failure count,
and ``raw.csv`` has one row per (repetition, estimator) so every figure
can be re-derived without a rerun. When several CI methods are
configured, raw rows carry the first one; coverage for each method is in
the metrics table.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .basis import basis_expand
from .data import Dataset
from .dgp import SETTINGS, SyntheticDataset, calibration, make_dataset
from .errors import ConfigError
from .estimator import (
    DictionaryConfig,
    LearnerConfig,
    SelectionConfig,
    aipw_crossfit,
    cross_balance_learned,
    cross_balance_selected,
    fit_fold_learners,
    fit_fold_selections,
    naive_balance,
    oracle_estimators,
    sbw_estimator,
    split_folds,
)
from .inference import bootstrap_ci
from .selection import approx_error_pair, combine

LEARNED_ROSTER = (
    "Cross_Bal",
    "Cross_Bal_prog",
    "Naive_Bal",
    "Naive_Bal_prog",
    "AIPW",
    "Oracle_CBal",
    "Oracle_AIPW",
)
SELECTED_ROSTER = ("Cross_Bal", "Outc_Only", "Prop_Only", "SBW", "Oracle_CBal", "Oracle_AIPW")

METRIC_COLUMNS = (
    "dgp", "n", "estimator", "ci_method", "bias", "sd", "rmse", "coverage",
    "ci_length", "sel_size", "eps_m", "eps_w", "eps_prod", "n_fail",
)
RAW_COLUMNS = ("rep", "estimator", "estimate", "ci_lo", "ci_hi", "sel_size", "seed")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to reproduce one simulation run."""

    dgp: str
    n: int
    reps: int
    estimators: tuple[str, ...] = ("Cross_Bal",)
    delta: float | None = None
    nonneg: bool | None = None
    ci_methods: tuple[str, ...] = ("wald",)
    bootstrap_b: int = 1000
    selection_method: str | None = None  # None => learned-feature mode
    dictionary_level: str = "raw"
    knots: int = 10
    prognostic: str = "ols"
    propensity: str | None = "logistic"
    clip: float = 0.01
    level: float = 0.95
    master_seed: int = 0
    threads: int = 1
    eps_diagnostics: bool = False
    eps_ref_size: int = 100_000

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.estimators:
            raise ConfigError("estimator roster must be nonempty")
        if self.dgp not in SETTINGS:
            raise ConfigError(f"unknown dgp setting {self.dgp!r}")
        roster = SELECTED_ROSTER if self.selection_method else LEARNED_ROSTER
        for tag in self.estimators:
            if tag not in roster:
                raise ConfigError(
                    f"estimator {tag!r} not in the "
                    f"{'selection' if self.selection_method else 'learned'} roster"
                )
        for m in self.ci_methods:
            if m not in ("wald", "bootstrap"):
                raise ConfigError(f"unknown ci method {m!r}")

    @property
    def effective_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return 0.01 if self.selection_method else 0.0

    @property
    def effective_nonneg(self) -> bool:
        if self.nonneg is not None:
            return self.nonneg
        return bool(self.selection_method)

    def hash(self) -> str:
        payload = json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SimulationResult:
    config: SimulationConfig
    theta0: float
    records: tuple[dict, ...]
    metrics: tuple[dict, ...]
    runtime_seconds: float
    config_hash: str


# Reference samples for approximation-error diagnostics are regenerated
# lazily per process and memoized (cheaper than shipping 1e5 rows to
# workers).
_EPS_REF_CACHE: dict = {}


def _eps_reference(cfg: SimulationConfig, treat_frac: float):
    key = (cfg.dgp, cfg.eps_ref_size, cfg.master_seed)
    if key not in _EPS_REF_CACHE:
        sd = make_dataset(
            cfg.dgp, cfg.eps_ref_size, rngmod.hash64(cfg.master_seed, "eps-ref", 0)
        )
        ctrl = sd.dataset.control_idx
        ratio = (1.0 - treat_frac) / treat_frac
        _EPS_REF_CACHE[key] = (
            sd.dataset.X[ctrl],
            sd.m0[ctrl],
            sd.e[ctrl] / (1.0 - sd.e[ctrl]) * ratio,
        )
    return _EPS_REF_CACHE[key]


def _estimate_once(tag, synthetic, cfg, seed, shared):
    """Run one roster entry on the rep's dataset with shared artifacts."""
    d = synthetic.dataset
    delta, nonneg = cfg.effective_delta, cfg.effective_nonneg
    lcfg = LearnerConfig(
        prognostic=cfg.prognostic, propensity=cfg.propensity, clip=cfg.clip
    )
    if tag == "Oracle_CBal":
        return oracle_estimators(
            synthetic, "oracle_cbal", delta=delta, seed=seed,
            level=cfg.level, split=shared.get("split"), nonneg=nonneg,
        )
    if tag == "Oracle_AIPW":
        return oracle_estimators(synthetic, "oracle_aipw", seed=seed, level=cfg.level)
    if cfg.selection_method:
        if tag == "SBW":
            return sbw_estimator(
                d, delta=delta, nonneg=nonneg, level=cfg.level,
                dictionary=shared["dictionary"],
            )
        strategy = {
            "Cross_Bal": "union",
            "Outc_Only": "outcome_only",
            "Prop_Only": "propensity_only",
        }[tag]
        scfg = replace(shared["selection_config"], strategy=strategy)
        return cross_balance_selected(
            d, selection_config=scfg, delta=delta, nonneg=nonneg, seed=seed,
            level=cfg.level, split=shared.get("split"),
            dictionary=shared.get("dictionary"),
            selections=shared.get("selections"),
        )
    if tag in ("Cross_Bal", "Cross_Bal_prog"):
        inc = "both" if tag == "Cross_Bal" else "prognostic_only"
        return cross_balance_learned(
            d, replace(lcfg, include=inc), delta=delta, nonneg=nonneg,
            seed=seed, level=cfg.level, split=shared.get("split"),
            fits=shared.get("fits"),
        )
    if tag in ("Naive_Bal", "Naive_Bal_prog"):
        inc = "both" if tag == "Naive_Bal" else "prognostic_only"
        return naive_balance(
            d, replace(lcfg, include=inc), delta=delta, nonneg=nonneg,
            seed=seed, level=cfg.level,
        )
    if tag == "AIPW":
        return aipw_crossfit(
            d, lcfg, seed=seed, level=cfg.level,
            split=shared.get("split"), fits=shared.get("fits"),
        )
    raise ConfigError(f"unknown estimator tag {tag!r}")


def _bootstrap_for_tag(tag, synthetic, cfg, seed):
    """Percentile bootstrap rerunning the full estimator per resample."""

    def closure(ds, child_seed, rows):
        sub = replace(
            synthetic,
            dataset=ds,
            m0=synthetic.m0[rows],
            e=synthetic.e[rows],
            latent=None if synthetic.latent is None else synthetic.latent[rows],
        )
        report = _estimate_once(tag, sub, cfg, child_seed, _shared_artifacts(sub, cfg, child_seed))
        return report.theta0_hat

    out = bootstrap_ci(
        synthetic.dataset,
        closure,
        b=cfg.bootstrap_b,
        level=cfg.level,
        seed=rngmod.hash64(seed, "bootstrap", 0),
        pass_rows=True,
    )
    return out["ci"]


def _shared_artifacts(synthetic, cfg, seed):
    """Per-repetition artifacts reused across roster entries."""
    d = synthetic.dataset
    shared: dict = {}
    shared["split"] = split_folds(d, seed)
    if cfg.selection_method:
        level = cfg.dictionary_level
        dictionary = basis_expand(d.X, level, cfg.knots)
        shared["dictionary"] = dictionary
        scfg = SelectionConfig(method=cfg.selection_method)
        shared["selection_config"] = scfg
        shared["selections"] = fit_fold_selections(
            dictionary.matrix, d, shared["split"], scfg, seed
        )
    else:
        needs_fits = any(
            t in ("Cross_Bal", "Cross_Bal_prog", "AIPW") for t in cfg.estimators
        )
        if needs_fits:
            lcfg = LearnerConfig(
                prognostic=cfg.prognostic, propensity=cfg.propensity, clip=cfg.clip
            )
            shared["fits"] = fit_fold_learners(d, shared["split"], lcfg, seed)
    return shared


def _eps_for_report(report, cfg, shared, treat_frac):
    """Mean approximation errors over the two folds' selected sets."""
    x_ref, m0_ref, w_ref = _eps_reference(cfg, treat_frac)
    dictionary = shared["dictionary"]
    ref_cols = dictionary.transform(x_ref) if dictionary.level != "raw" else x_ref
    eps_m, eps_w = [], []
    for fold in report.per_fold:
        sel = fold.feature_source
        if sel is None or not hasattr(sel, "indices") or sel.size == 0:
            return None
        pair = approx_error_pair(sel, m0_ref, w_ref, ref_cols)
        eps_m.append(pair.epsilon_m)
        eps_w.append(pair.epsilon_w)
    em, ew = float(np.mean(eps_m)), float(np.mean(eps_w))
    return em, ew, em * ew


def _run_rep(args):
    cfg, rep, theta0, treat_frac = args
    seed = rngmod.hash64(cfg.master_seed, "rep", rep)
    synthetic = replace(
        make_dataset(cfg.dgp, cfg.n, seed), theta0=theta0, treat_frac=treat_frac
    )
    shared = _shared_artifacts(synthetic, cfg, seed)
    records = []
    for tag in cfg.estimators:
        rec = {
            "rep": rep,
            "estimator": tag,
            "seed": seed,
            "estimate": None,
            "sigma2": None,
            "cis": {},
            "sel_size": None,
            "eps": None,
            "error": None,
        }
        try:
            report = _estimate_once(tag, synthetic, cfg, seed, shared)
            rec["estimate"] = report.theta0_hat
            rec["sigma2"] = report.sigma2_hat
            rec["sel_size"] = report.mean_selection_size
            if "wald" in cfg.ci_methods:
                rec["cis"]["wald"] = (report.ci[0], report.ci[1])
            if "bootstrap" in cfg.ci_methods:
                rec["cis"]["bootstrap"] = _bootstrap_for_tag(
                    tag, synthetic, cfg, seed
                )[:2]
            if (
                cfg.eps_diagnostics
                and cfg.selection_method
                and tag in ("Cross_Bal", "Outc_Only", "Prop_Only")
            ):
                rec["eps"] = _eps_for_report(report, cfg, shared, treat_frac)
        except Exception as exc:  # recorded, never silently dropped
            rec["error"] = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


_WORKER_LIMITS = None


def _worker_init():
    """Pin BLAS pools to one thread inside workers.

    Repetition-level processes already saturate the cores, and a fixed
    BLAS thread count keeps float results identical across ``threads``
    settings (reductions reorder under BLAS threading).
    """
    global _WORKER_LIMITS
    try:
        from threadpoolctl import threadpool_limits

        _WORKER_LIMITS = threadpool_limits(limits=1)
    except ImportError:  # determinism then relies on ambient BLAS config
        pass


def run_simulation(cfg: SimulationConfig) -> SimulationResult:
    """Run the full Monte Carlo study described by ``cfg``."""
    start = time.time()
    cal = calibration(cfg.dgp)
    tasks = [(cfg, rep, cal.theta0, cal.treat_frac) for rep in range(cfg.reps)]
    threads = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    if threads > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_worker_init
        ) as pool:
            per_rep = list(pool.map(_run_rep, tasks, chunksize=2))
    else:
        try:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=1):
                per_rep = [_run_rep(t) for t in tasks]
        except ImportError:
            per_rep = [_run_rep(t) for t in tasks]
    records = tuple(rec for batch in per_rep for rec in batch)
    metrics = aggregate(records, cal.theta0, cfg)
    return SimulationResult(
        config=cfg,
        theta0=cal.theta0,
        records=records,
        metrics=metrics,
        runtime_seconds=time.time() - start,
        config_hash=cfg.hash(),
    )


def aggregate(records, theta0: float, cfg: SimulationConfig) -> tuple[dict, ...]:
    """Per-(estimator, ci_method) metric rows against the calibrated theta0."""
    rows = []
    for tag in cfg.estimators:
        recs = [r for r in records if r["estimator"] == tag]
        good = [r for r in recs if r["error"] is None]
        n_fail = len(recs) - len(good)
        estimates = np.array([r["estimate"] for r in good], dtype=float)
        if estimates.size:
            bias = float(estimates.mean() - theta0)
            sd = float(estimates.std(ddof=1)) if estimates.size > 1 else 0.0
            rmse = float(np.sqrt(bias**2 + sd**2))
        else:
            bias = sd = rmse = float("nan")
        sel_sizes = [r["sel_size"] for r in good if r["sel_size"] is not None]
        sel_mean = float(np.mean(sel_sizes)) if sel_sizes else None
        eps_vals = [r["eps"] for r in good if r["eps"] is not None]
        if eps_vals:
            eps_m = float(np.mean([e[0] for e in eps_vals]))
            eps_w = float(np.mean([e[1] for e in eps_vals]))
            eps_p = float(np.mean([e[2] for e in eps_vals]))
        else:
            eps_m = eps_w = eps_p = None
        for method in cfg.ci_methods:
            cis = [r["cis"].get(method) for r in good]
            cis = [c for c in cis if c is not None]
            if cis:
                cover = float(np.mean([lo <= theta0 <= hi for lo, hi in cis]))
                length = float(np.mean([hi - lo for lo, hi in cis]))
            else:
                cover = length = float("nan")
            rows.append(
                {
                    "dgp": cfg.dgp,
                    "n": cfg.n,
                    "estimator": tag,
                    "ci_method": method,
                    "bias": bias,
                    "sd": sd,
                    "rmse": rmse,
                    "coverage": cover,
                    "ci_length": length,
                    "sel_size": sel_mean,
                    "eps_m": eps_m,
                    "eps_w": eps_w,
                    "eps_prod": eps_p,
                    "n_fail": n_fail,
                }
            )
    return tuple(rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv(result: SimulationResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in result.metrics:
        writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def raw_csv(result: SimulationResult) -> str:
    primary = result.config.ci_methods[0] if result.config.ci_methods else None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RAW_COLUMNS)
    for rec in result.records:
        ci = rec["cis"].get(primary) if primary else None
        writer.writerow(
            [
                rec["rep"],
                rec["estimator"],
                _fmt(rec["estimate"]),
                _fmt(None if ci is None else ci[0]),
                _fmt(None if ci is None else ci[1]),
                _fmt(rec["sel_size"]),
                rec["seed"],
            ]
        )
    return buf.getvalue()
