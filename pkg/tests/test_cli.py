import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from glucodyn.cli import main

SCENARIO = {
    "n_subjects": 25,
    "days": 2,
    "seed": 55,
    "outcome_links": [
        {"name": "hba1c_5y", "intercept": 2.0, "hba1c_baseline": 0.6,
         "glucose_mean": 0.01, "noise_sd": 0.1},
        {"name": "fpg_5y", "intercept": 40.0, "fpg_baseline": 0.5,
         "glucose_mean": 0.2, "noise_sd": 2.0},
    ],
}

FIT_CONFIG = {
    "k0": 4,
    "l0": 4,
    "smoothing": {"knots_per_day": 6, "lambda_smooth": 2.0},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scenario.json").write_text(json.dumps(SCENARIO))
    (root / "fit_config.json").write_text(json.dumps(FIT_CONFIG))
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["synth", "--config", str(root / "scenario.json"), "--out-dir", str(root / "data")],
    )
    assert result.exit_code == 0, result.output
    return root


def run_cli(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


class TestSynth:
    def test_outputs_exist(self, workspace):
        data = workspace / "data"
        for name in ("cgm.csv", "subjects.csv", "calibration.csv", "run_manifest.json"):
            assert (data / name).exists()
        manifest = json.loads((data / "run_manifest.json").read_text())
        assert manifest["run"]["subcommand"] == "synth"
        assert manifest["run"]["tool_version"]
        assert "created_utc" in manifest["timing"]

    def test_rerun_byte_identical_outside_manifest_timing(self, workspace, tmp_path):
        result = run_cli(
            "synth", "--config", workspace / "scenario.json", "--out-dir", tmp_path
        )
        assert result.exit_code == 0
        for name in ("cgm.csv", "subjects.csv", "calibration.csv"):
            assert (tmp_path / name).read_bytes() == (workspace / "data" / name).read_bytes()
        m1 = json.loads((tmp_path / "run_manifest.json").read_text())
        m2 = json.loads((workspace / "data" / "run_manifest.json").read_text())
        assert m1["run"]["config_hash"] == m2["run"]["config_hash"]


class TestValidate:
    def test_valid_cohort_exit_zero(self, workspace):
        result = run_cli(
            "validate",
            "--cgm", workspace / "data" / "cgm.csv",
            "--calibration", workspace / "data" / "calibration.csv",
        )
        assert result.exit_code == 0, result.output
        assert "valid" in result.output

    def test_short_series_exit_one(self, workspace, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text(
            "subject_id,timestamp,glucose_mgdl\n"
            + "".join(f"x,{5 * i},100\n" for i in range(100))
        )
        result = run_cli("validate", "--cgm", path)
        assert result.exit_code == 1
        assert "min-duration" in result.output


class TestMetrics:
    def test_constant_fixture_row(self, workspace, tmp_path):
        path = tmp_path / "const.csv"
        path.write_text(
            "subject_id,timestamp,glucose_mgdl\n"
            + "".join(f"c,{5 * i},100\n" for i in range(3 * 288 + 1))
        )
        out = tmp_path / "metrics.csv"
        result = run_cli("metrics", "--cgm", path, "--out", out)
        assert result.exit_code == 0, result.output
        header, row = out.read_text().strip().split("\n")
        cells = dict(zip(header.split(","), row.split(",")))
        assert float(cells["mean"]) == 100.0
        assert float(cells["mage"]) == 0.0
        assert float(cells["conga1"]) == 0.0
        assert float(cells["tar"]) == 0.0

    def test_panel_for_cohort(self, workspace, tmp_path):
        out = tmp_path / "metrics.csv"
        result = run_cli("metrics", "--cgm", workspace / "data" / "cgm.csv", "--out", out)
        assert result.exit_code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 1 + SCENARIO["n_subjects"]


class TestGlucodensityAndHeatmap:
    def test_per_subject_json(self, workspace, tmp_path):
        result = run_cli(
            "glucodensity",
            "--cgm", workspace / "data" / "cgm.csv",
            "--out-dir", tmp_path,
            "--lambda-smooth", "2.0",
        )
        assert result.exit_code == 0, result.output
        files = sorted(tmp_path.glob("S*.json"))
        assert len(files) == SCENARIO["n_subjects"]
        payload = json.loads(files[0].read_text())
        assert len(payload["glucose"]) == 100
        assert len(payload["speed"]) == 100
        assert len(payload["acceleration"]) == 100

    def test_heatmap_csv(self, workspace, tmp_path):
        out = tmp_path / "heat.csv"
        result = run_cli(
            "heatmap",
            "--cgm", workspace / "data" / "cgm.csv",
            "--out", out,
            "--grid-size-x", "12",
            "--grid-size-y", "10",
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 13  # header + one row per x-grid node
        assert len(lines[0].split(",")) == 11


class TestFitLadderReport:
    def test_fit_writes_model_and_diagnostics(self, workspace, tmp_path):
        result = run_cli(
            "fit",
            "--cgm", workspace / "data" / "cgm.csv",
            "--subjects", workspace / "data" / "subjects.csv",
            "--outcome", "hba1c_5y",
            "--model", "3",
            "--config", workspace / "fit_config.json",
            "--out-model", tmp_path / "model.json",
            "--out-diagnostics", tmp_path / "diag.json",
        )
        assert result.exit_code == 0, result.output
        model = json.loads((tmp_path / "model.json").read_text())
        assert model["schema_version"] == 1
        assert [c["channel"] for c in model["channels"]] == ["glucose"]
        diag = json.loads((tmp_path / "diag.json").read_text())
        assert "r2_adj" in diag and "ubre" in diag

    def test_ladder_table_and_report(self, workspace, tmp_path):
        result = run_cli(
            "ladder",
            "--cgm", workspace / "data" / "cgm.csv",
            "--subjects", workspace / "data" / "subjects.csv",
            "--models", "1,2,3",
            "--config", workspace / "fit_config.json",
            "--out-dir", tmp_path,
        )
        assert result.exit_code == 0, result.output
        table = (tmp_path / "ladder.csv").read_text().strip().split("\n")
        assert table[0] == "outcome,model_1,model_2,model_3"
        assert len(table) == 3  # two outcomes
        assert (tmp_path / "coefficients_hba1c_5y.csv").exists()
        assert (tmp_path / "coefficients_fpg_5y.csv").exists()

        report_out = tmp_path / "report.md"
        result = run_cli(
            "report", "--ladder", tmp_path / "ladder.json", "--out", report_out
        )
        assert result.exit_code == 0, result.output
        assert report_out.read_text().startswith("# Model comparison")

    def test_ladder_idempotent(self, workspace, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        for out in (out1, out2):
            result = run_cli(
                "ladder",
                "--cgm", workspace / "data" / "cgm.csv",
                "--subjects", workspace / "data" / "subjects.csv",
                "--models", "1,2",
                "--config", workspace / "fit_config.json",
                "--out-dir", out,
            )
            assert result.exit_code == 0, result.output
        assert (out1 / "ladder.csv").read_bytes() == (out2 / "ladder.csv").read_bytes()
        assert (out1 / "ladder.json").read_bytes() == (out2 / "ladder.json").read_bytes()


class TestUsageErrors:
    def test_unknown_flag_exit_two(self):
        result = run_cli("metrics", "--bogus-flag", "x")
        assert result.exit_code == 2

    def test_unknown_subcommand_exit_two(self):
        result = run_cli("frobnicate")
        assert result.exit_code == 2

    def test_missing_required_option_exit_two(self):
        result = run_cli("metrics")
        assert result.exit_code == 2

    def test_domain_error_exit_one(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("subject_id,timestamp,glucose_mgdl\na,0,80\na,5,500\n")
        result = run_cli("metrics", "--cgm", bad, "--out", tmp_path / "m.csv")
        assert result.exit_code == 1
        assert "RangeError" in result.output
