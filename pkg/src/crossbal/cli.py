"""Command-line entry points: ``simulate``, ``analyze``, ``diagnose``.

Configuration is a flat key=value file with dotted namespaces plus flag
overrides (flags win). Every command writes a ``manifest.json`` into the
output directory before heavy work begins; the manifest alone suffices
to reproduce the run. Exit codes: 2 for configuration or input-schema
errors, 1 for runtime failures (partial outputs are preserved).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .balance import smd_report
from .basis import LEVELS, basis_expand
from .data import Dataset
from .errors import ConfigError, CrossBalError, DimensionMismatch
from .estimator import (
    DictionaryConfig,
    LearnerConfig,
    SelectionConfig,
    cross_balance_learned,
    cross_balance_selected,
)
from .harness import (
    LEARNED_ROSTER,
    SELECTED_ROSTER,
    SimulationConfig,
    metrics_csv,
    raw_csv,
    run_simulation,
)
from .inference import bootstrap_ci

ROSTER_SHORTCUTS = {
    "paper-fig2": LEARNED_ROSTER,
    "paper-fig4": ("Cross_Bal", "Outc_Only", "Prop_Only", "SBW"),
}


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_value(part) for part in raw.split(","))
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def load_config(path: str) -> dict:
    """Parse a flat key=value config file with dotted namespaces."""
    values: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            values[key] = _parse_value(raw)
    return values


def _fallback_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CROSSBAL_SEED")
    return int(env) if env else 0


def _write_manifest(out_dir: str, command: str, resolved: dict, config_path=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config_path": config_path,
        "resolved_config": resolved,
        "output_dir": os.path.abspath(out_dir),
        "versions": {
            "crossbal": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    return manifest


def _simulation_config(cfg_file: dict, args) -> SimulationConfig:
    roster = args.roster or cfg_file.get("estimators", "Cross_Bal")
    if isinstance(roster, str):
        roster = ROSTER_SHORTCUTS.get(roster, tuple(roster.split(",")))
    elif isinstance(roster, tuple):
        roster = tuple(str(r) for r in roster)
    ci_methods = cfg_file.get("ci_methods", "wald")
    if isinstance(ci_methods, str):
        ci_methods = tuple(ci_methods.split(","))
    get = cfg_file.get
    return SimulationConfig(
        dgp=args.dgp or get("dgp"),
        n=args.n or get("n"),
        reps=args.reps or get("reps"),
        estimators=tuple(roster),
        delta=args.delta if args.delta is not None else get("delta"),
        nonneg=get("nonneg"),
        ci_methods=ci_methods,
        bootstrap_b=get("bootstrap.b", 1000),
        selection_method=get("selection.method"),
        dictionary_level=get("dictionary.level", "raw"),
        knots=get("dictionary.knots", 10),
        prognostic=get("learners.prognostic", "ols"),
        propensity=get("learners.propensity", "logistic"),
        clip=get("learners.clip", 0.01),
        level=args.level if args.level is not None else get("level", 0.95),
        master_seed=_fallback_seed(args) or get("seed", 0),
        threads=args.threads if args.threads is not None else get("threads", 1),
        eps_diagnostics=bool(get("eps.enabled", False)),
        eps_ref_size=get("eps.ref_size", 100_000),
    )


def cmd_simulate(args) -> int:
    cfg_file = load_config(args.config) if args.config else {}
    try:
        cfg = _simulation_config(cfg_file, args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    resolved = asdict(cfg)
    _write_manifest(args.out, "simulate", resolved, args.config)
    try:
        result = run_simulation(cfg)
    except CrossBalError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(result))
    with open(os.path.join(args.out, "raw.csv"), "w", encoding="utf-8") as fh:
        fh.write(raw_csv(result))
    with open(os.path.join(args.out, "theta0.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"dgp": cfg.dgp, "theta0": result.theta0, "config_hash": result.config_hash},
            fh,
        )
        fh.write("\n")
    print(
        f"simulate: {cfg.dgp} n={cfg.n} reps={cfg.reps} "
        f"-> {args.out}/metrics.csv ({result.runtime_seconds:.1f}s)"
    )
    return 0


def read_dataset_csv(path: str) -> Dataset:
    """Strict CSV reader: columns y, t, then numeric covariates."""
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        cols = [c.strip() for c in header]
        if "y" not in cols or "t" not in cols:
            raise ConfigError(f"{path}: header must contain 'y' and 't' columns")
        y_idx, t_idx = cols.index("y"), cols.index("t")
        cov_idx = [i for i in range(len(cols)) if i not in (y_idx, t_idx)]
        ys, ts, rows = [], [], []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise ConfigError(f"{path}: row {rownum} has {len(row)} fields")
            for i, cell in enumerate(row):
                if cell.strip() == "":
                    raise ConfigError(
                        f"{path}: missing value at row {rownum}, column '{cols[i]}'"
                    )
            try:
                ys.append(float(row[y_idx]))
                t_val = float(row[t_idx])
                rows.append([float(row[i]) for i in cov_idx])
            except ValueError as exc:
                raise ConfigError(f"{path}: row {rownum}: {exc}") from None
            if t_val not in (0.0, 1.0):
                raise ConfigError(
                    f"{path}: row {rownum}: t must be 0 or 1, got {t_val}"
                )
            ts.append(int(t_val))
    try:
        return Dataset(
            X=np.asarray(rows, dtype=np.float64),
            T=np.asarray(ts),
            Y=np.asarray(ys),
            column_names=tuple(cols[i] for i in cov_idx),
        )
    except (ValueError, DimensionMismatch) as exc:
        raise ConfigError(f"{path}: invalid dataset: {exc}") from None


def _analyze_one(dataset, cfg_file, seed, delta, level, dict_level, threads):
    mode = cfg_file.get("mode", "selected")
    nonneg = bool(cfg_file.get("nonneg", True))
    raw_delta = bool(cfg_file.get("delta.raw_scale", False))
    if mode == "selected":
        report = cross_balance_selected(
            dataset,
            DictionaryConfig(level=dict_level, knots=cfg_file.get("dictionary.knots", 10)),
            SelectionConfig(
                method=cfg_file.get("selection.method", "lasso"),
                strategy=cfg_file.get("selection.strategy", "union"),
            ),
            delta=delta,
            nonneg=nonneg,
            seed=seed,
            level=level,
            delta_on_raw_scale=raw_delta,
        )
    else:
        report = cross_balance_learned(
            dataset,
            LearnerConfig(
                prognostic=cfg_file.get("learners.prognostic", "ols"),
                propensity=cfg_file.get("learners.propensity", "logistic"),
                clip=cfg_file.get("learners.clip", 0.01),
            ),
            delta=delta,
            nonneg=nonneg,
            seed=seed,
            level=level,
            delta_on_raw_scale=raw_delta,
        )
    return report


def cmd_analyze(args) -> int:
    try:
        cfg_file = load_config(args.config) if args.config else {}
        dataset = read_dataset_csv(args.data)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    seed = _fallback_seed(args) or cfg_file.get("seed", 0)
    delta = args.delta if args.delta is not None else cfg_file.get("delta", 0.01)
    level = args.level if args.level is not None else cfg_file.get("level", 0.95)
    dict_level = cfg_file.get("dictionary.level", "raw")
    resolved = dict(cfg_file)
    resolved.update({"seed": seed, "delta": delta, "level": level, "data": args.data})
    _write_manifest(args.out, "analyze", resolved, args.config)
    try:
        report = _analyze_one(
            dataset, cfg_file, seed, delta, level, dict_level, args.threads
        )
        payload = {
            "method": report.method_tag,
            "theta0_hat": report.theta0_hat,
            "att_hat": report.att_hat,
            "sigma2_hat": report.sigma2_hat,
            "ci": {"wald": list(report.ci)},
            "mean_selection_size": report.mean_selection_size,
            "diagnostics": list(report.diagnostics),
        }
        ci_methods = cfg_file.get("ci_methods", "wald")
        if isinstance(ci_methods, str):
            ci_methods = tuple(ci_methods.split(","))
        if "bootstrap" in ci_methods:
            boot = bootstrap_ci(
                dataset,
                lambda ds, s: _analyze_one(
                    ds, cfg_file, s, delta, level, dict_level, args.threads
                ).theta0_hat,
                b=int(cfg_file.get("bootstrap.b", 1000)),
                level=level,
                seed=seed,
            )
            payload["ci"]["bootstrap"] = list(boot["ci"])

        # per-unit weights
        with open(os.path.join(args.out, "weights.csv"), "w", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "weight"])
            for row, w in zip(dataset.control_idx, report.weights):
                writer.writerow([int(row), repr(float(w))])

        # selected variables per fold
        dictionary = basis_expand(
            dataset.X, dict_level, cfg_file.get("dictionary.knots", 10)
        )
        selected_union: set[int] = set()
        with open(os.path.join(args.out, "selected.csv"), "w", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fold", "column", "label"])
            for fold in report.per_fold:
                sel = fold.feature_source
                if hasattr(sel, "indices"):
                    for idx in sel.indices:
                        selected_union.add(idx)
                        writer.writerow([fold.fold_id, idx, dictionary.provenance[idx]])

        # SMD before/after over the dictionary columns
        before = smd_report(dataset, dictionary.matrix, names=list(dictionary.provenance))
        after = smd_report(
            dataset, dictionary.matrix, weights=report.weights,
            names=list(dictionary.provenance),
        )
        with open(os.path.join(args.out, "smd.csv"), "w", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["column", "label", "smd_before", "smd_after", "selected"])
            for b, a in zip(before, after):
                writer.writerow(
                    [b.index, b.name, repr(b.smd), repr(a.smd), int(b.index in selected_union)]
                )

        # optional weight-robustness comparison across dictionaries
        compare = cfg_file.get("compare_dictionaries")
        if compare:
            levels = compare if isinstance(compare, tuple) else (compare,)
            weight_sets = {dict_level: report.weights}
            for lvl in levels:
                if lvl == dict_level:
                    continue
                alt = _analyze_one(dataset, cfg_file, seed, delta, level, lvl, args.threads)
                weight_sets[lvl] = alt.weights
            names = list(weight_sets)
            corr = {}
            for i, a in enumerate(names):
                for b in names[i + 1 :]:
                    ra = np.argsort(np.argsort(weight_sets[a]))
                    rb = np.argsort(np.argsort(weight_sets[b]))
                    corr[f"{a}|{b}"] = float(np.corrcoef(ra, rb)[0, 1])
            payload["weight_rank_correlations"] = corr
            with open(
                os.path.join(args.out, "weights_by_dictionary.csv"), "w",
                encoding="utf-8",
            ) as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["row"] + names)
                for i, row in enumerate(dataset.control_idx):
                    writer.writerow(
                        [int(row)] + [repr(float(weight_sets[nm][i])) for nm in names]
                    )

        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except CrossBalError as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return 1
    print(
        f"analyze: theta0_hat={report.theta0_hat:.6g} att_hat={report.att_hat:.6g} "
        f"-> {args.out}/report.json"
    )
    return 0


def cmd_diagnose(args) -> int:
    try:
        dataset = read_dataset_csv(args.data)
        weights = _read_weights(args.weights, dataset)
        selected = _read_selected(args.selected) if args.selected else None
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    _write_manifest(
        args.out, "diagnose",
        {"data": args.data, "weights": args.weights, "selected": args.selected},
    )
    before = smd_report(dataset, dataset.X)
    after = smd_report(dataset, dataset.X, weights=weights)
    with open(os.path.join(args.out, "smd.csv"), "w", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["column", "label", "smd_before", "smd_after", "group"])
        for b, a in zip(before, after):
            group = (
                "all"
                if selected is None
                else ("selected" if b.index in selected else "unselected")
            )
            writer.writerow([b.index, b.name, repr(b.smd), repr(a.smd), group])
    print(f"diagnose: {len(before)} features -> {args.out}/smd.csv")
    return 0


def _read_weights(path: str, dataset: Dataset) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        cols = [c.strip() for c in header]
        if "weight" not in cols:
            raise ConfigError(f"{path}: expected a 'weight' column")
        w_idx = cols.index("weight")
        row_idx = cols.index("row") if "row" in cols else None
        weights_map = {}
        values = []
        for rownum, row in enumerate(reader, start=2):
            try:
                w = float(row[w_idx])
            except (ValueError, IndexError):
                raise ConfigError(f"{path}: bad weight at row {rownum}") from None
            if row_idx is not None:
                weights_map[int(float(row[row_idx]))] = w
            values.append(w)
    ctrl = dataset.control_idx
    if weights_map:
        missing = [int(r) for r in ctrl if int(r) not in weights_map]
        if missing or len(weights_map) != ctrl.size:
            raise ConfigError(
                "weights file does not align with control rows "
                f"(missing {missing[:5]}, sizes {len(weights_map)} vs {ctrl.size})"
            )
        return np.array([weights_map[int(r)] for r in ctrl])
    if len(values) != ctrl.size:
        raise ConfigError(
            f"weights file has {len(values)} rows, expected {ctrl.size} controls"
        )
    return np.asarray(values)


def _read_selected(path: str) -> set[int]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        cols = [c.strip() for c in header]
        if "column" not in cols:
            raise ConfigError(f"{path}: expected a 'column' column")
        c_idx = cols.index("column")
        return {int(float(row[c_idx])) for row in reader if row}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossbal",
        description="Cross-balancing weights: simulation, analysis, diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (falls back to CROSSBAL_SEED)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count (0 = auto)")
        p.add_argument("--delta", type=float, default=None,
                       help="balance tolerance")
        p.add_argument("--level", type=float, default=None,
                       help="confidence level")

    sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    sim.add_argument("--config", default=None, help="key=value config file")
    sim.add_argument("--dgp", default=None, help="DGP setting id (e.g. a4s2)")
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--roster", default=None,
                     help="comma list or shortcut (paper-fig2, paper-fig4)")
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="estimate from a CSV dataset")
    ana.add_argument("data", help="CSV with columns y, t, covariates")
    ana.add_argument("--config", default=None)
    common(ana)
    ana.set_defaults(func=cmd_analyze)

    dia = sub.add_parser("diagnose", help="balance diagnostics from weights")
    dia.add_argument("data", help="CSV with columns y, t, covariates")
    dia.add_argument("weights", help="CSV with control-unit weights")
    dia.add_argument("--selected", default=None,
                     help="CSV of selected columns (from analyze)")
    common(dia)
    dia.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CrossBalError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
