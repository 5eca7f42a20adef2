"""Tests for the command-line interface."""

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from crossbal import dgp
from crossbal.cli import load_config, main, read_dataset_csv
from crossbal.errors import ConfigError


def write_dataset_csv(path, sd):
    d = sd.dataset
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "t"] + [f"x{j + 1}" for j in range(d.p)])
        for i in range(d.n):
            writer.writerow(
                [repr(float(d.Y[i])), int(d.T[i])] + [repr(float(v)) for v in d.X[i]]
            )


@pytest.fixture(scope="module")
def synthetic_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "a7s1.csv"
    sd = dgp.make_dataset("a7s1", 400, 99)
    write_dataset_csv(path, sd)
    return str(path), sd


class TestConfigParsing:
    def test_key_value_and_comments(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# a comment\n"
            "dgp = a4s2\n"
            "n = 500\n"
            "learners.prognostic = forest   # inline comment\n"
            "nonneg = true\n"
            "estimators = Cross_Bal,AIPW\n"
        )
        values = load_config(str(cfg))
        assert values["dgp"] == "a4s2"
        assert values["n"] == 500
        assert values["learners.prognostic"] == "forest"
        assert values["nonneg"] is True
        assert values["estimators"] == ("Cross_Bal", "AIPW")

    def test_bad_line_reports_location(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dgp a4s2\n")
        with pytest.raises(ConfigError, match="bad.cfg:1"):
            load_config(str(cfg))


class TestReadDataset:
    def test_roundtrip(self, synthetic_csv):
        path, sd = synthetic_csv
        d = read_dataset_csv(path)
        assert d.n == sd.dataset.n
        assert np.allclose(d.X, sd.dataset.X)
        assert np.array_equal(d.T, sd.dataset.T)

    def test_missing_value_reported(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("y,t,x1\n1.0,0,2.0\n2.0,1,\n")
        with pytest.raises(ConfigError, match="row 3, column 'x1'"):
            read_dataset_csv(str(path))

    def test_all_treated_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("y,t,x1\n1.0,1,2.0\n2.0,1,3.0\n")
        with pytest.raises(ConfigError, match="both treatment groups"):
            read_dataset_csv(str(path))


class TestSimulateCommand:
    def test_minimal_config(self, tmp_path):
        out = tmp_path / "sim"
        code = main(
            [
                "simulate", "--dgp", "a4s2", "--n", "200", "--reps", "10",
                "--roster", "Oracle_AIPW", "--seed", "5", "--out", str(out),
            ]
        )
        assert code == 0
        metrics = (out / "metrics.csv").read_text().splitlines()
        assert len(metrics) == 2  # header + one estimator row
        assert (out / "manifest.json").exists()
        assert (out / "raw.csv").exists()

    def test_rerun_byte_identical(self, tmp_path):
        outs = []
        for name in ("one", "two"):
            out = tmp_path / name
            main(
                [
                    "simulate", "--dgp", "a4s2", "--n", "200", "--reps", "8",
                    "--roster", "Oracle_AIPW,Cross_Bal", "--seed", "9",
                    "--out", str(out),
                ]
            )
            outs.append(
                ((out / "metrics.csv").read_bytes(), (out / "raw.csv").read_bytes())
            )
        assert outs[0] == outs[1]

    def test_config_error_exit_2(self, tmp_path):
        code = main(
            [
                "simulate", "--dgp", "bogus", "--n", "100", "--reps", "5",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == 2

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CROSSBAL_SEED", "1234")
        out = tmp_path / "env"
        code = main(
            [
                "simulate", "--dgp", "a4s2", "--n", "200", "--reps", "4",
                "--roster", "Oracle_AIPW", "--out", str(out),
            ]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolved_config"]["master_seed"] == 1234


class TestAnalyzeCommand:
    def test_synthetic_roundtrip(self, synthetic_csv, tmp_path):
        path, sd = synthetic_csv
        out = tmp_path / "ana"
        cfg = tmp_path / "ana.cfg"
        cfg.write_text(
            "mode = selected\nselection.method = lasso\n"
            "dictionary.level = splines\ndictionary.knots = 4\n"
        )
        code = main(
            ["analyze", path, "--config", str(cfg), "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        theta0 = dgp.calibration("a7s1").theta0
        # desk-scale sanity: estimate lands within a generous band of truth
        assert abs(report["theta0_hat"] - theta0) < 5.0
        weights = (out / "weights.csv").read_text().splitlines()
        assert len(weights) == 1 + sd.dataset.n_c
        assert (out / "selected.csv").exists()
        smd_lines = (out / "smd.csv").read_text().splitlines()
        assert smd_lines[0] == "column,label,smd_before,smd_after,selected"

    def test_all_treated_exit_2(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,t,x1\n1.0,1,2.0\n2.0,1,3.0\n1.5,1,1.0\n")
        code = main(["analyze", str(path), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_dictionary_comparison_emits_rank_correlations(
        self, synthetic_csv, tmp_path
    ):
        path, _ = synthetic_csv
        out = tmp_path / "cmp"
        cfg = tmp_path / "cmp.cfg"
        cfg.write_text(
            "mode = selected\nselection.method = lasso\n"
            "dictionary.level = splines\ndictionary.knots = 3\n"
            "compare_dictionaries = poly3_interactions\n"
        )
        code = main(
            ["analyze", path, "--config", str(cfg), "--seed", "4", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        corr = report["weight_rank_correlations"]
        assert len(corr) == 1
        assert all(np.isfinite(v) for v in corr.values())
        assert (out / "weights_by_dictionary.csv").exists()


class TestDiagnoseCommand:
    def test_uniform_weights_before_equals_after(self, synthetic_csv, tmp_path):
        path, sd = synthetic_csv
        wpath = tmp_path / "w.csv"
        with open(wpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "weight"])
            for row in sd.dataset.control_idx:
                writer.writerow([int(row), 1.0])
        out = tmp_path / "diag"
        code = main(["diagnose", path, str(wpath), "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(open(out / "smd.csv")))
        for row in rows:
            assert abs(float(row["smd_before"]) - float(row["smd_after"])) < 1e-12

    def test_misaligned_weights_exit_2(self, synthetic_csv, tmp_path):
        path, _ = synthetic_csv
        wpath = tmp_path / "short.csv"
        wpath.write_text("row,weight\n0,1.0\n")
        code = main(["diagnose", path, str(wpath), "--out", str(tmp_path / "d2")])
        assert code == 2

    def test_selected_grouping(self, synthetic_csv, tmp_path):
        path, sd = synthetic_csv
        wpath = tmp_path / "w2.csv"
        with open(wpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["weight"])
            for _ in range(sd.dataset.n_c):
                writer.writerow([1.0])
        spath = tmp_path / "sel.csv"
        spath.write_text("fold,column,label\n1,0,x1\n")
        out = tmp_path / "d3"
        code = main(
            ["diagnose", path, str(wpath), "--selected", str(spath), "--out", str(out)]
        )
        assert code == 0
        rows = list(csv.DictReader(open(out / "smd.csv")))
        groups = {row["label"]: row["group"] for row in rows}
        assert groups["x1"] == "selected"
        assert groups["x2"] == "unselected"


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = tmp_path / "mod"
        proc = subprocess.run(
            [
                sys.executable, "-m", "crossbal.cli", "simulate",
                "--dgp", "a4s2", "--n", "200", "--reps", "3",
                "--roster", "Oracle_AIPW", "--out", str(out),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "metrics.csv").exists()
