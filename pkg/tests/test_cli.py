import json

import pandas as pd
import pytest

from refclass import main
from helpers import growing_panel, synthetic_spec

CLIMATE = ["--algorithm", "market_climate", "--window", "3", "--variables", "opmar"]


@pytest.fixture
def panel_csv(tmp_path):
    path = tmp_path / "panel.csv"
    growing_panel().export_csv(path, lags=())
    return str(path)


@pytest.fixture
def backtest_json(tmp_path, panel_csv):
    path = tmp_path / "backtest.json"
    path.write_text(json.dumps({
        "panel": panel_csv,
        "output": str(tmp_path / "results.csv"),
        "horizons": [1],
        "windows": [3],
        "sizes": [0.1],
        "combinations": ["lard"],
        "algorithms": ["market_climate", "rank_deviation"],
        "variable_sets": [["opmar"]],
    }))
    return str(path)


def test_forecast_text(panel_csv, capsys):
    assert main(["forecast", "--panel", panel_csv, "--firm", "F00", "--year", "2005"] + CLIMATE) == 0
    out = capsys.readouterr().out
    assert "class size  90" in out
    assert "q50" in out


def test_forecast_csv_and_outcomes(panel_csv, tmp_path):
    out, outcomes = tmp_path / "f.csv", tmp_path / "o.csv"
    code = main([
        "forecast", "--panel", panel_csv, "--firm", "F00", "--year", "2005", "--quantiles", "10,50,90",
        "--format", "csv", "--out", str(out), "--outcomes", str(outcomes),
    ] + CLIMATE)
    assert code == 0
    frame = pd.read_csv(out)
    assert frame.loc[frame["section"] == "quantile", "label"].tolist() == ["q10", "q50", "q90"]
    assert len(pd.read_csv(outcomes)) == 90


def test_usage_errors_exit_1(panel_csv, tmp_path):
    assert main(["forecast", "--bogus"]) == 1
    assert main(["forecast", "--panel", panel_csv, "--firm", "F00", "--year", "2005", "--quantiles", "abc"]) == 1
    assert main(["forecast", "--panel", panel_csv, "--firm", "F00", "--year", "2005", "--preset", "best-h2"]) == 1
    missing = str(tmp_path / "nope.json")
    assert main(["forecast", "--panel", panel_csv, "--firm", "F00", "--year", "2005", "--config", missing]) == 1
    assert main(["forecast", "--panel", panel_csv, "--firm", "F00", "--year", "2005", "--size", "2"]) == 1
    assert main([]) == 1


def test_data_errors_exit_2(panel_csv, tmp_path, capsys):
    assert main(["forecast", "--panel", str(tmp_path / "none.csv"), "--firm", "F00", "--year", "2005"]) == 2
    assert main(["forecast", "--panel", panel_csv, "--firm", "F00", "--year", "1990"] + CLIMATE) == 2
    assert main(["forecast", "--panel", panel_csv, "--firm", "ZZ", "--year", "2005"] + CLIMATE) == 2
    assert "refclass:" in capsys.readouterr().err


def test_ingest_with_schema(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text("firm_id,year,revenue\nA,2000,100\nA,2001,110\n")
    schema = tmp_path / "schema.json"
    schema.write_text('{"revenue": "sales"}')
    out = tmp_path / "clean.csv"
    assert main(["ingest", "--csv", str(raw), "--schema", str(schema), "--out", str(out)]) == 0
    assert pd.read_csv(out)["sales"].tolist() == [100.0, 110.0]
    schema.write_text("{not json")
    assert main(["ingest", "--csv", str(raw), "--schema", str(schema), "--out", str(out)]) == 1


def test_derive(panel_csv, tmp_path):
    out = tmp_path / "derived.csv"
    assert main(["derive", "--panel", panel_csv, "--max-lag", "3", "--out", str(out)]) == 0
    columns = pd.read_csv(out, nrows=1).columns.tolist()
    assert "salesGR_3" in columns and "opmarDelta_3" in columns
    assert "salesGR_4" not in columns


def test_assess(panel_csv, tmp_path):
    estimates = tmp_path / "estimates.csv"
    estimates.write_text("firm_id,year,horizon,estimate_pct\nF00,2005,1,-5\nF00,2005,1,10.5\n")
    out = tmp_path / "assessment.csv"
    code = main(["assess", "--panel", panel_csv, "--estimates", str(estimates), "--format", "csv", "--out", str(out)] + CLIMATE)
    assert code == 0
    frame = pd.read_csv(out)
    assert frame["pit"].tolist() == pytest.approx([0.0, 11 / 30])
    assert frame["warning"].tolist() == [True, True]


def test_track(panel_csv, capsys):
    code = main(["track", "--panel", panel_csv, "--start-year", "1990", "--firm", "F00", "--from", "1991", "--to", "1994"] + CLIMATE)
    assert code == 0
    out = capsys.readouterr().out
    assert "insufficient_candidates" in out
    assert "realized 0.0" in out


def test_synth(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(synthetic_spec(firms=5, years=6).model_dump_json())
    out = tmp_path / "synth"
    assert main(["--seed", "4", "synth", "--spec", str(spec), "--out", str(out)]) == 0
    assert len(pd.read_csv(out / "panel.csv")) == 30
    assert len(pd.read_csv(out / "sidecar.csv")) == 25


def test_backtest_and_report(backtest_json, tmp_path, capsys):
    assert main(["backtest", "--config", backtest_json]) == 0
    results = tmp_path / "results.csv"
    assert len(pd.read_csv(results)) == 2
    assert main(["backtest", "--config", backtest_json]) == 0
    assert len(pd.read_csv(results)) == 2
    capsys.readouterr()
    assert main(["report", "--results", str(results), "--top", "5"]) == 0
    out = capsys.readouterr().out
    assert "market_climate" in out and "rank_deviation" in out


def test_backtest_needs_panel(tmp_path):
    path = tmp_path / "bare.json"
    path.write_text("{}")
    assert main(["backtest", "--config", str(path)]) == 1
    assert main(["backtest", "--config", str(tmp_path / "absent.json")]) == 1


def test_brute_force_search(backtest_json, tmp_path):
    out = tmp_path / "search.csv"
    code = main(["search", "brute", "--horizon", "1", "--config", backtest_json, "--variables", "opmar,sales", "--output", str(out)])
    assert code == 0
    assert len(pd.read_csv(out)) == 3 * 2
    assert main(["search", "brute", "--horizon", "1", "--config", backtest_json, "--variables", "opmar,sales", "--cap", "1"]) == 1


def test_search_checkpoints_runs_and_records_config(backtest_json, tmp_path):
    out = tmp_path / "search.csv"
    argv = ["search", "brute", "--horizon", "1", "--config", backtest_json, "--variables", "opmar,sales", "--output", str(out)]
    assert main(argv) == 0
    runs = tmp_path / "search.runs.csv"
    stored = len(pd.read_csv(runs))
    assert stored > 0
    recorded = json.loads((tmp_path / "search.config.json").read_text())
    assert recorded["output"] == str(out)
    first = pd.read_csv(out)
    assert main(argv) == 0
    assert len(pd.read_csv(runs)) == stored
    assert pd.read_csv(out)["dq"].tolist() == pytest.approx(first["dq"].tolist())
    assert main(argv + ["--restart"]) == 0
    assert len(pd.read_csv(runs)) == stored
