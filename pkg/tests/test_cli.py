"""End-to-end CLI checks: artifacts, determinism, config precedence, exits."""

import math

import numpy as np
import pytest
from click.testing import CliRunner

from splitsgd.cli import cli, main
from splitsgd.core import RngStream
from splitsgd.objectives import (
    DATA_STREAM_CHILD,
    build_problem,
    make_default_spec,
    read_dataset_csv,
)


@pytest.fixture()
def runner():
    return CliRunner()


def _rows(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def _meta(path):
    side = path.parent / (path.name + ".meta")
    entries = {}
    for line in side.read_text().splitlines():
        key, _, value = line.partition("=")
        entries[key] = value
    return entries


class TestQrisk:
    def test_prints_exact_default_value(self, runner):
        result = runner.invoke(cli, ["qrisk", "--w", "20", "--q", "0.4"])
        assert result.exit_code == 0
        assert result.output.strip() == repr(137980 / 2.0**20)

    def test_zero_threshold(self, runner):
        result = runner.invoke(cli, ["qrisk", "--w", "7", "--q", "0"])
        assert result.exit_code == 0
        assert float(result.output) == 0.0

    def test_out_file_and_sidecar(self, runner, tmp_path):
        out = tmp_path / "risk.txt"
        result = runner.invoke(cli, ["qrisk", "--w", "2", "--q", "0.5", "--out", str(out)])
        assert result.exit_code == 0
        assert out.read_text() == "0.25\n"
        meta = _meta(out)
        assert meta["command"] == "qrisk"
        assert meta["schema_version"] == "1"

    def test_invalid_threshold_is_usage_error(self, runner):
        result = runner.invoke(cli, ["qrisk", "--w", "10", "--q", "1.5"])
        assert result.exit_code == 2


class TestCompare:
    def test_row_count_order_and_sidecar(self, runner, tmp_path):
        out = tmp_path / "cmp.csv"
        result = runner.invoke(cli, [
            "compare", "--methods", "const,sqrt", "--etas", "1e-3,1e-2",
            "--epochs", "1", "--seeds", "2", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        header, rows = _rows(out)
        assert header == ["method", "eta", "seed", "final_log_loss"]
        assert len(rows) == 2 * 2 * 2
        keys = [(r[0], float(r[1]), int(r[2])) for r in rows]
        assert keys == sorted(keys)
        assert all(math.isfinite(float(r[3])) for r in rows)
        meta = _meta(out)
        assert meta["command"] == "compare"
        assert meta["epochs"] == "1"
        assert meta["methods"] == "const,sqrt"
        assert "timestamp" not in meta

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        out = tmp_path / "cmp.csv"
        args = [
            "compare", "--methods", "splitsgd,const", "--etas", "1e-3",
            "--epochs", "2", "--seeds", "2", "--t1-epochs", "1", "--out", str(out),
        ]
        assert runner.invoke(cli, args).exit_code == 0
        first_csv = out.read_bytes()
        first_meta = (tmp_path / "cmp.csv.meta").read_bytes()
        assert runner.invoke(cli, args).exit_code == 0
        assert out.read_bytes() == first_csv
        assert (tmp_path / "cmp.csv.meta").read_bytes() == first_meta

    def test_worker_pool_matches_sequential(self, runner, tmp_path):
        seq = tmp_path / "seq.csv"
        par = tmp_path / "par.csv"
        base = ["compare", "--methods", "const", "--etas", "1e-3", "--epochs", "1",
                "--seeds", "2"]
        assert runner.invoke(cli, base + ["--threads", "1", "--out", str(seq)]).exit_code == 0
        assert runner.invoke(cli, base + ["--threads", "2", "--out", str(par)]).exit_code == 0
        assert seq.read_bytes() == par.read_bytes()

    def test_zero_rate_final_loss_ignores_budget(self, runner, tmp_path):
        values = []
        for epochs in ("1", "3"):
            out = tmp_path / f"zero{epochs}.csv"
            result = runner.invoke(cli, [
                "compare", "--methods", "const", "--etas", "0.0",
                "--epochs", epochs, "--seeds", "1", "--out", str(out),
            ])
            assert result.exit_code == 0
            _, rows = _rows(out)
            values.append(rows[0][3])
        assert values[0] == values[1]

    def test_near_optimum_start_beats_reversed_after_one_epoch(self, runner, tmp_path):
        finals = {}
        for start in ("near-opt", "reversed"):
            out = tmp_path / f"{start}.csv"
            result = runner.invoke(cli, [
                "compare", "--methods", "const", "--etas", "1e-3", "--epochs", "1",
                "--seeds", "1", "--start", start, "--out", str(out),
            ])
            assert result.exit_code == 0
            _, rows = _rows(out)
            finals[start] = float(rows[0][3])
        assert finals["near-opt"] < finals["reversed"]

    def test_config_file_supplies_defaults_flags_override(self, runner, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment line\n"
            "methods=const\n"
            "etas=1e-3\n"
            "epochs=1\n"
            "seeds=1\n"
        )
        out = tmp_path / "cfg.csv"
        result = runner.invoke(cli, [
            "compare", "--config", str(cfg), "--seeds", "2", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        _, rows = _rows(out)
        assert len(rows) == 2  # 1 method x 1 eta x 2 seeds (flag wins over file)
        meta = _meta(out)
        assert meta["epochs"] == "1"
        assert meta["seeds"] == "2"

    def test_malformed_config_line_is_usage_error(self, runner, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a key value pair\n")
        result = runner.invoke(cli, [
            "compare", "--config", str(cfg), "--out", str(tmp_path / "x.csv"),
        ])
        assert result.exit_code == 2

    def test_unknown_method_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(cli, [
            "compare", "--methods", "adam", "--out", str(tmp_path / "x.csv"),
        ])
        assert result.exit_code == 2
        assert "adam" in result.output

    def test_malformed_etas_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(cli, [
            "compare", "--etas", "1e-3,abc", "--out", str(tmp_path / "x.csv"),
        ])
        assert result.exit_code == 2

    def test_missing_out_is_usage_error(self, runner):
        assert runner.invoke(cli, ["compare"]).exit_code == 2

    def test_threads_env_fallback(self, runner, tmp_path):
        out = tmp_path / "env.csv"
        result = runner.invoke(
            cli,
            ["compare", "--methods", "const", "--etas", "1e-3", "--epochs", "1",
             "--seeds", "1", "--out", str(out)],
            env={"SPLITSGD_THREADS": "3"},
        )
        assert result.exit_code == 0
        assert _meta(out)["threads"] == "3"

    def test_bad_threads_env_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(
            cli,
            ["compare", "--methods", "const", "--etas", "1e-3",
             "--out", str(tmp_path / "x.csv")],
            env={"SPLITSGD_THREADS": "many"},
        )
        assert result.exit_code == 2


class TestRace:
    def test_rows_structure_and_determinism(self, runner, tmp_path):
        out = tmp_path / "race.csv"
        args = ["race", "--reps", "2", "--max-epochs", "3", "--out", str(out)]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.output
        header, rows = _rows(out)
        assert header == ["rep", "method", "detection_epoch", "capped"]
        assert [(int(r[0]), r[1]) for r in rows] == [
            (0, "pflug"), (0, "split"), (1, "pflug"), (1, "split"),
        ]
        for r in rows:
            epoch, capped = int(r[2]), r[3]
            assert capped in {"0", "1"}
            assert 1 <= epoch <= 3
            if capped == "1":
                assert epoch == 3
        first = out.read_bytes()
        assert runner.invoke(cli, args).exit_code == 0
        assert out.read_bytes() == first

    def test_split_detection_cannot_precede_first_diagnostic(self, runner, tmp_path):
        out = tmp_path / "race.csv"
        result = runner.invoke(cli, [
            "race", "--reps", "3", "--max-epochs", "8", "--eta-scale", "large",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        _, rows = _rows(out)
        for r in rows:
            if r[1] == "split" and r[3] == "0":
                assert int(r[2]) >= 5  # 4 thread epochs + 1 charged diagnostic epoch
        meta = _meta(out)
        assert meta["eta"] == "0.001"
        assert meta["eta_scale"] == "large"

    def test_divergent_rate_exits_3(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main([
                "race", "--eta", "1e6", "--reps", "1", "--max-epochs", "2",
                "--out", str(tmp_path / "x.csv"),
            ])
        assert exc.value.code == 3
        assert not (tmp_path / "x.csv").exists()


class TestMc:
    def test_artifact_and_summary(self, runner, tmp_path):
        out = tmp_path / "mc.csv"
        result = runner.invoke(cli, [
            "mc", "--reps", "10", "--l", "5", "--window-index", "2",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        header, rows = _rows(out)
        assert header == ["replication", "q_value", "normalized"]
        assert len(rows) == 10
        assert all(r[2] == "0" for r in rows)
        meta = _meta(out)
        assert meta["kept"] == "10"
        assert meta["diverged"] == "0"
        assert meta["windows"] == "2"
        for key in ("mean", "sd", "negative_fraction"):
            assert key in meta
        assert "negative_fraction=" in result.output

    def test_normalized_flag_bounds_values(self, runner, tmp_path):
        out = tmp_path / "mcn.csv"
        result = runner.invoke(cli, [
            "mc", "--reps", "8", "--l", "4", "--window-index", "1",
            "--normalized", "--out", str(out),
        ])
        assert result.exit_code == 0
        _, rows = _rows(out)
        assert all(-1.0 <= float(r[1]) <= 1.0 for r in rows)
        assert all(r[2] == "1" for r in rows)

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        out = tmp_path / "mc.csv"
        args = ["mc", "--reps", "6", "--l", "4", "--out", str(out)]
        assert runner.invoke(cli, args).exit_code == 0
        first = out.read_bytes()
        assert runner.invoke(cli, args).exit_code == 0
        assert out.read_bytes() == first


class TestSensitivity:
    def test_grid_artifact(self, runner, tmp_path):
        out = tmp_path / "sens.csv"
        result = runner.invoke(cli, [
            "sensitivity", "--w-values", "10,20", "--q-values", "0.4",
            "--etas", "1e-3", "--seeds", "1", "--epochs", "1", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        header, rows = _rows(out)
        assert header == ["w", "q", "eta", "seed", "final_log_loss"]
        assert len(rows) == 2
        keys = [(int(r[0]), float(r[1]), float(r[2]), int(r[3])) for r in rows]
        assert keys == sorted(keys)

    def test_indivisible_w_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(cli, [
            "sensitivity", "--w-values", "7", "--out", str(tmp_path / "x.csv"),
        ])
        assert result.exit_code == 2


class TestGenData:
    def test_round_trips_the_generator(self, runner, tmp_path):
        out = tmp_path / "data.csv"
        result = runner.invoke(cli, [
            "gen-data", "--n", "30", "--d", "3", "--seed", "9", "--out", str(out),
        ])
        assert result.exit_code == 0
        header, rows = _rows(out)
        assert header == ["x1", "x2", "x3", "y"]
        assert len(rows) == 30
        dataset = read_dataset_csv(out)
        spec = make_default_spec("linear", RngStream(9).fork(DATA_STREAM_CHILD), n=30, d=3)
        expected = build_problem(spec).dataset
        assert np.array_equal(dataset.features, expected.features)
        assert np.array_equal(dataset.targets, expected.targets)


class TestEntryPoints:
    def test_version(self, runner):
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert "splitsgd" in result.output

    def test_short_help_alias(self, runner):
        result = runner.invoke(cli, ["-h"])
        assert result.exit_code == 0
        assert "Usage" in result.output

    def test_main_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
