import numpy as np
import pandas as pd
import pytest

from backtest import BacktestEntry, ResultStore, run_config
from errors import ConfigError, DataError
from forecast import DistributionalForecast, assess_estimates
from panel_store import FirmYear
from report import (
    assessment_sections,
    emit,
    forecast_frame,
    forecast_sections,
    load_results,
    render_text,
    results_sections,
)
from selection import Algorithm, SelectorConfig
from helpers import growing_panel


@pytest.fixture
def forecast():
    return DistributionalForecast(
        np.arange(1.0, 21.0), horizon=3, case=FirmYear("A", 2005), candidate_count=400, provenance="market_climate"
    )


@pytest.fixture
def results_file(tmp_path):
    panel = growing_panel()
    store = ResultStore(tmp_path / "results.csv")
    for selector in (SelectorConfig(size=0.1), SelectorConfig(algorithm=Algorithm.market_climate, min_size=100)):
        store.write(run_config(panel, BacktestEntry(1, 3, ("opmar",), selector)))
    return store.path


def test_forecast_sections(forecast):
    sections = forecast_sections(forecast)
    titles = [title for title, _ in sections]
    assert titles[0] == "Forecast"
    assert "CAGR over 3 year(s)" in titles[2]
    header = dict(sections[0][1])
    assert header["case"] == "A/2005"
    assert header["class size"] == "20"
    quantiles = dict(sections[1][1])
    assert quantiles["q50"] == "10.00"
    text = render_text(sections)
    assert "class size" in text and "q99" in text


def test_forecast_frame(forecast):
    frame = forecast_frame(forecast)
    assert frame.columns.tolist() == ["section", "label", "value"]
    assert len(frame) == 2 + 9 + 21
    assert frame.loc[frame["label"] == "q50", "value"].item() == 10.0


def test_assessment_sections(forecast):
    sections = assessment_sections(assess_estimates(forecast, [6, 25]))
    summary = dict(sections[1][1])
    assert summary["warning"] == "estimates in the forecast tails"
    assert sections[0][1][0] == ("estimate 6.00%", "PIT 0.300")


def test_emit_formats(tmp_path, forecast):
    sections, frame = forecast_sections(forecast), forecast_frame(forecast)
    assert emit(sections, frame, "csv").startswith("section,label,value")
    assert emit(sections, frame, "text").startswith("Forecast")
    out = tmp_path / "forecast.txt"
    assert emit(sections, frame, "text", out) is None
    assert out.read_text().startswith("Forecast")
    with pytest.raises(ConfigError):
        emit(sections, frame, "html")
    with pytest.raises(ConfigError):
        emit(sections, None, "csv")
    with pytest.raises(ConfigError):
        emit(sections, frame, "pdf")


def test_emit_pdf(tmp_path, forecast):
    out = tmp_path / "forecast.pdf"
    emit(forecast_sections(forecast), None, "pdf", out)
    assert out.read_bytes()[:4] == b"%PDF"


def test_results_ranking(results_file):
    frame = load_results(results_file)
    assert len(frame) == 2
    lines = results_sections(frame)[0][1]
    assert lines[0][0].startswith("h=1 rank_deviation opmar lard")
    assert "m=510" in lines[0][1]
    assert lines[1][1].startswith("dq=-")
    assert len(results_sections(frame, top=1)[0][1]) == 1
    assert results_sections(frame.iloc[0:0])[0][1] == [("none", "")]


def test_load_results_errors(tmp_path):
    with pytest.raises(DataError):
        load_results(tmp_path / "missing.csv")
    other = tmp_path / "other.csv"
    pd.DataFrame({"a": [1]}).to_csv(other, index=False)
    with pytest.raises(DataError):
        load_results(other)
