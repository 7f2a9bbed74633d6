import json

import pytest

from conftest import DATA
from scarcity.cli import main
from scarcity.dataset import serialize
from scarcity.synth import GeneratorConfig, generate

FIXTURE = str(DATA / "fixture_observations.csv")


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_growth_command(tmp_path, capsys):
    assert main(["growth", "--output-dir", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "growth.json").read_text())["rows"]
    agg = next(r for r in rows if r["indicator"] == "aggregate")
    assert agg["g_pct"] == -1.01
    assert (tmp_path / "growth.csv").exists()


def test_uplift_command(tmp_path, capsys):
    assert main(["uplift", "--xi", "1", "--gap", "0.0193", "--output-dir", str(tmp_path)]) == 0
    assert "0.7200" in capsys.readouterr().out
    point = json.loads((tmp_path / "uplift_curve.json").read_text())["point"]
    assert round(point["uplift"], 4) == 0.72


def test_rpc_command(tmp_path, capsys):
    assert main(["rpc", "--xi", "1", "--xi-se", "0.1", "--gap", "0.02", "--gap-se", "0.002",
                 "--output-dir", str(tmp_path)]) == 0
    row = json.loads((tmp_path / "rpc.json").read_text())["rows"][0]
    assert row["ci_low"] == pytest.approx(0.014456, abs=1e-6)


def test_fit_noiseless(tmp_path):
    ds = generate(GeneratorConfig(noise_sd=0.0, study_effect_sd=0.0, seed=1))
    path = tmp_path / "obs.csv"
    serialize(ds, path)
    ini = tmp_path / "lean.ini"
    ini.write_text("[model]\ncovariates = none\nes_group_included = false\n"
                   "country_indicators = false\n")
    assert main(["fit", "--input", str(path), "--config", str(ini), "--estimator", "ols",
                 "--output-dir", str(tmp_path)]) == 0
    row = json.loads((tmp_path / "fit.json").read_text())["rows"][0]
    assert row["xi"] == pytest.approx(0.8, abs=1e-9)


def test_fit_fixture_with_hausman(tmp_path):
    assert main(["fit", "--input", FIXTURE, "--hausman", "--output-dir", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "fit.json").read_text())
    assert payload["hausman"]["dof"] > 0
    assert payload["fit"]["estimator"] == "random_effects"


@pytest.mark.parametrize("cmd", [
    ["summarize"], ["hetero", "--partition", "income_median"], ["ingest"],
    ["sensitivity", "--kind", "alternatives"], ["specchart", "--toggles", "3"],
])
def test_data_commands(tmp_path, cmd):
    assert main(cmd + ["--input", FIXTURE, "--output-dir", str(tmp_path)]) == 0
    assert any(tmp_path.iterdir())


def test_report_manifest(tmp_path):
    assert main(["report", "--input", FIXTURE, "--output-dir", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert {"config_fingerprint", "version", "spec_fingerprint"} <= set(manifest)
    assert "fit.csv" in manifest["outputs"]


def test_simulate(tmp_path):
    assert main(["simulate", "--seed", "3", "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "synthetic.csv").exists()


def test_usage_error(capsys):
    assert main(["fit", "--estimator", "lasso"]) == 2
    assert _err(capsys)["exit_code"] == 2


def test_missing_input(tmp_path, capsys):
    assert main(["fit", "--input", str(tmp_path / "nope.csv")]) == 4
    assert _err(capsys)["error"] == "missing_input"


def test_bad_config(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[model]\nnonsense = 1\n")
    assert main(["fit", "--input", FIXTURE, "--config", str(ini)]) == 3
    assert _err(capsys)["error"] == "validation"


def test_computation_error(tmp_path, capsys):
    ini = tmp_path / "asia.ini"
    ini.write_text("[model]\nsubset_filter = continent == antarctica\n")
    assert main(["fit", "--input", FIXTURE, "--config", str(ini)]) == 5
    assert _err(capsys)["error"] == "computation"
