"""End-to-end command behavior: files, determinism, exit codes, provenance."""

import json
import os

import numpy as np
import pytest

from causaldantzig import gram_to_dict, gram_from_envs, simulate_all, spec_to_dict
from causaldantzig import builtin_spec
from causaldantzig.cli import main
from causaldantzig.sem import read_datasets_csv, write_datasets_csv


def _run(*argv):
    return main(list(argv))


def _read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


class TestSimulate:
    def test_row_and_column_counts(self, tmp_path, capsys):
        out = tmp_path / "sim"
        code = _run(
            "simulate", "--model", "sem_example", "--n", "1000",
            "--seed", "20240801", "--out", str(out),
        )
        assert code == 0
        text = _read(out / "data.csv")
        lines = [l for l in text.splitlines() if l and not l.startswith("#")]
        assert lines[0] == "env,X1,X2,X3,Y"
        assert len(lines) - 1 == 2000
        assert all(len(l.split(",")) == 5 for l in lines[1:])
        assert (out / "env_1.csv").exists() and (out / "env_2.csv").exists()
        prov = json.loads(_read(out / "provenance.json"))
        assert prov["seed"] == 20240801 and "spec_hash" in prov

    def test_zero_rows_header_only(self, tmp_path):
        out = tmp_path / "sim0"
        assert _run(
            "simulate", "--model", "sem_A", "--n", "0",
            "--seed", "1", "--out", str(out),
        ) == 0
        lines = [
            l for l in _read(out / "data.csv").splitlines() if not l.startswith("#")
        ]
        assert lines == ["env,X1,X2,Y"]

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert _run(
                "simulate", "--model", "sem_C", "--p", "4", "--sigma", "2.0",
                "--n", "50", "--seed", "7", "--out", str(out),
            ) == 0
        assert _read(a / "data.csv") == _read(b / "data.csv")

    def test_total_split(self, tmp_path):
        out = tmp_path / "tot"
        assert _run(
            "simulate", "--model", "sem_A", "--n", "101", "--total",
            "--seed", "1", "--out", str(out),
        ) == 0
        envs, _ = read_datasets_csv(out / "data.csv")
        assert [e.n for e in envs] == [51, 50]

    def test_seed_required(self, tmp_path):
        assert _run(
            "simulate", "--model", "sem_A", "--n", "5", "--out", str(tmp_path / "x")
        ) == 2


class TestFit:
    @pytest.fixture()
    def data_csv(self, tmp_path):
        out = tmp_path / "sim"
        _run(
            "simulate", "--model", "sem_example", "--n", "1000",
            "--seed", "20240801", "--out", str(out),
        )
        return str(out / "data.csv")

    def test_plain_fit_table_and_json(self, data_csv, tmp_path, capsys):
        out = tmp_path / "fit"
        assert _run("fit", data_csv, "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "Unregularized causal Dantzig" in printed
        assert "***" in printed
        payload = json.loads(_read(out / "fit.json"))
        assert abs(payload["beta"][1] - 1.0) < 0.2
        assert payload["pvalue"][1] < 1e-6

    def test_lambda_above_threshold_gives_zero(self, data_csv, capsys):
        assert _run("fit", data_csv, "--lambda", "1e9") == 0
        printed = capsys.readouterr().out
        for token in printed.splitlines()[1:4]:
            assert " 0.0000" in token

    def test_single_environment_rejected(self, tmp_path):
        spec = builtin_spec("sem_A")
        envs = simulate_all(spec, 20, seed=1)[:1]
        path = tmp_path / "one.csv"
        write_datasets_csv(path, envs)
        assert _run("fit", str(path)) == 2

    def test_singular_gram_exit_code(self, tmp_path, capsys):
        # duplicated predictor column makes the Gram difference singular
        spec = builtin_spec("sem_A")
        envs = simulate_all(spec, 200, seed=3)
        from causaldantzig import EnvDataset

        doubled = [
            EnvDataset(e.env_label, np.column_stack([e.X, e.X[:, 0]]), e.Y)
            for e in envs
        ]
        path = tmp_path / "singular.csv"
        write_datasets_csv(path, doubled)
        assert _run("fit", str(path)) == 3
        assert "--regularized" in capsys.readouterr().err

    def test_cv_fit_writes_path(self, tmp_path, capsys):
        spec = builtin_spec("sem_C", p=5, sigma=2.5)
        envs = simulate_all(spec, 40, seed=11)
        data = tmp_path / "chain.csv"
        write_datasets_csv(data, envs)
        out = tmp_path / "cv"
        assert _run(
            "fit", str(data), "--cv", "--seed", "5", "--n-lambdas", "15",
            "--out", str(out),
        ) == 0
        assert "cross-validated lambda" in capsys.readouterr().out
        lines = _read(out / "path.csv").splitlines()
        assert lines[0].startswith("lambda,cv_score,beta_1")
        assert len(lines) == 16

    def test_from_gram(self, tmp_path, capsys):
        spec = builtin_spec("sem_example")
        envs = simulate_all(spec, 500, seed=9)
        gram, _ = gram_from_envs(envs)
        path = tmp_path / "gram.json"
        path.write_text(json.dumps(gram_to_dict(gram)))
        assert _run("fit", "--from-gram", str(path)) == 0
        assert "Estimate" in capsys.readouterr().out


class TestStudies:
    def test_coverage_study_csv_and_provenance(self, tmp_path, capsys):
        out = tmp_path / "cov"
        assert _run(
            "coverage-study", "--model", "sem_A", "--n", "300", "--reps", "40",
            "--seed", "20240801", "--out", str(out),
        ) == 0
        text = _read(out / "coverage.csv")
        lines = text.splitlines()
        assert lines[0].startswith("n,coverage,coverage_se,avg_length")
        assert lines[-1].startswith("# seed=20240801 spec_hash=")
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert 0.8 < float(row["coverage"]) <= 1.0

    def test_thread_count_never_changes_bytes(self, tmp_path):
        outs = []
        for name, threads in (("t1", "1"), ("t4", "4")):
            out = tmp_path / name
            assert _run(
                "coverage-study", "--model", "sem_A", "--n", "200",
                "--reps", "16", "--seed", "3", "--threads", threads,
                "--out", str(out),
            ) == 0
            outs.append(_read(out / "coverage.csv"))
        assert outs[0] == outs[1]

    def test_iv_compare(self, tmp_path, capsys):
        out = tmp_path / "iv"
        assert _run(
            "iv-compare", "--n", "100", "--reps", "40", "--seed", "20240801",
            "--out", str(out),
        ) == 0
        text = _read(out / "iv_compare.csv")
        header = text.splitlines()[0].split(",")
        assert {"model", "n", "mse_dantzig", "mse_wald", "wald_degenerate"} <= set(header)
        rows = [
            dict(zip(header, line.split(",")))
            for line in text.splitlines()[1:]
            if not line.startswith("#")
        ]
        strong = next(r for r in rows if r["model"] == "iv_strong")
        assert float(strong["mse_dantzig"]) < 0.1

    def test_regpath_files(self, tmp_path, capsys):
        out = tmp_path / "rp"
        assert _run(
            "regpath", "--model", "sem_C", "--p", "10", "--sigma", "2.5",
            "--n", "30", "--seed", "20240801", "--n-lambdas", "20",
            "--plot-data", "--out", str(out),
        ) == 0
        path_lines = _read(out / "path.csv").splitlines()
        assert len([l for l in path_lines if not l.startswith("#")]) == 21
        assert (out / "plot_data.csv").exists()
        assert "chosen lambda" in capsys.readouterr().out


class TestDiagnosticsCommands:
    def test_ccif_command(self, tmp_path, capsys):
        spec = builtin_spec("sem_example")
        envs = simulate_all(spec, 400, seed=2)
        gram, _ = gram_from_envs(envs)
        path = tmp_path / "gram.json"
        path.write_text(json.dumps(gram_to_dict(gram)))
        assert _run("ccif", str(path), "--set", "X2", "--q", "inf") == 0
        value = float(capsys.readouterr().out.strip().splitlines()[0])
        assert value > 0.0

    def test_identifiability_command(self, tmp_path, capsys):
        spec = builtin_spec("sem_C", p=4, sigma=2.0)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec_to_dict(spec)))
        assert _run("identifiability", str(path)) == 0
        assert "identifiable" in capsys.readouterr().out

    def test_unidentifiable_witness_printed(self, tmp_path, capsys):
        spec = builtin_spec("sem_C", p=4, sigma=2.0)
        data = spec_to_dict(spec)
        # wipe the intervention on the last predictor
        cov = np.asarray(data["environments"][1]["cov"]).reshape(5, 5)
        cov[3, :] = 0.0
        cov[:, 3] = 0.0
        data["environments"][1]["cov"] = [float(v) for v in cov.reshape(-1)]
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(data))
        assert _run("identifiability", str(path)) == 0
        out = capsys.readouterr().out
        assert "not identifiable" in out and "X4" in out


class TestConfigAndErrors:
    def test_config_file_fills_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 5}))
        out = tmp_path / "sim"
        assert _run(
            "simulate", "--model", "sem_A", "--n", "10",
            "--config", str(cfg), "--out", str(out),
        ) == 0

    def test_missing_file_is_io_error(self):
        assert _run("fit", "/nonexistent/data.csv") == 4

    def test_unknown_model_rejected_by_parser(self):
        with pytest.raises(SystemExit) as err:
            _run("simulate", "--model", "nope", "--n", "5", "--seed", "1")
        assert err.value.code == 2
