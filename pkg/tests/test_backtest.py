import numpy as np
import pandas as pd
import pytest

from backtest import (
    PCA_GRID_SIZE,
    RD_GRID_SIZE,
    RESULT_COLUMNS,
    BacktestEntry,
    BacktestResult,
    BacktestRunner,
    ResultStore,
    brute_force,
    enumerate_cases,
    forward_selection,
    option_grid,
    pca_options,
    rank_deviation_options,
    rank_results,
    results_frame,
    run_backtest,
    run_config,
    variable_subsets,
)
from calibration import CalibrationReport
from config import BacktestConfig, lagged_variables
from errors import ConfigError
from panel_store import CONTEMPORANEOUS
from selection import Algorithm, SelectorConfig
from synthgen import generate
from helpers import growing_panel, synthetic_spec


def _climate(min_size=20):
    return SelectorConfig(algorithm=Algorithm.market_climate, min_size=min_size)


def _gappy_panel():
    """opmar missing for firms F10..F29 in 1995 and 1996."""
    panel = growing_panel()
    frame = panel.to_frame()
    codes = frame["firm_id"].str[1:].astype(int)
    frame.loc[(codes >= 10) & frame["year"].isin([1995, 1996]), "opmar"] = np.nan
    return panel.with_columns({"opmar": frame["opmar"].to_numpy()})


def test_enumerate_cases_matches_direct_scan():
    panel = growing_panel()
    cases = enumerate_cases(panel, 1, 3, ["opmar"])
    expected = sorted(
        (year, f"F{i:02d}") for i in range(30) for year in range(1990, 2011) if 1993 <= year <= 2009
    )
    assert [(c.target.year, c.target.firm_id) for c in cases] == expected
    assert all(c.window == 3 and c.horizon == 1 for c in cases)


def test_enumerate_cases_long_panel():
    panel = growing_panel(firms=1, start_year=1950, end_year=2019)
    years = [c.target.year for c in enumerate_cases(panel, 10, 30, ["sales"])]
    assert years == list(range(1989, 2010))


def test_enumerate_cases_skips_missing_target_values():
    cases = enumerate_cases(_gappy_panel(), 1, 3, ["opmar"])
    assert len(cases) == 470


def test_counts_add_up_to_eligible_cases():
    entry = BacktestEntry(1, 3, ("opmar",), _climate(min_size=75))
    result = run_config(_gappy_panel(), entry)
    assert result.eligible == 470
    assert result.m == 370
    assert result.skip_reasons == {"undersized_class": 100}
    assert result.m + result.skipped == result.eligible


def test_nothing_usable(caplog):
    entry = BacktestEntry(1, 3, ("opmar",), _climate(min_size=100))
    result = run_config(growing_panel(), entry)
    assert not result.usable
    assert result.skipped == result.eligible == 510
    assert np.isnan(result.report.delta_q)
    assert "no usable cases" in caplog.text


def test_market_climate_pits():
    # every firm grows at its own constant rate, so a climate class is uniform over the firm rates
    result = run_config(growing_panel(), BacktestEntry(1, 3, ("opmar",), _climate()))
    assert result.m == 510
    assert result.report.delta_q < 0.5


@pytest.mark.parametrize("workers", [2, 8])
def test_worker_count_does_not_change_scores(synthetic, workers):
    entry = BacktestEntry(1, 5, ("opmar",), SelectorConfig(size=0.05))
    single = run_config(synthetic.panel, entry, workers=1)
    pooled = run_config(synthetic.panel, entry, workers=workers)
    assert single.m == pooled.m > 0
    assert single.report.delta_q == pooled.report.delta_q
    assert single.report.ks == pooled.report.ks
    assert single.report.cvm == pooled.report.cvm
    assert single.skip_reasons == pooled.skip_reasons


def test_runner_reuses_pool_for_several_entries(synthetic):
    entries = [BacktestEntry(1, w, ("opmar", "at"), SelectorConfig(size=0.05)) for w in (5, 10)]
    with BacktestRunner(synthetic.panel, workers=2) as runner:
        results = [runner.run(e) for e in entries]
    assert [r.entry.window for r in results] == [5, 10]
    assert all(r.usable for r in results)


def test_grid_sizes():
    assert len(rank_deviation_options()) == RD_GRID_SIZE == 60
    assert len(pca_options()) == PCA_GRID_SIZE == 1200
    assert len(rank_deviation_options([30], [0.05], ["lard"])) == 1


def test_option_grid():
    config = BacktestConfig(algorithms=["rank_deviation", "pca_rank_deviation", "market_climate"])
    single = option_grid(config, 1, ["sales"])
    assert len(single) == 60 + 4
    double = option_grid(config, 1, ["sales", "opmar"])
    assert len(double) == 60 + 1200 + 4
    keys = {e.key() for e in double}
    assert len(keys) == len(double)
    lard = [e for e in double if e.selector.combination.value == "lard"]
    assert not any(e.selector.correction for e in lard)


def test_variable_subsets():
    names = ["sales", "opmar", "at", "seq", "beta", "salesGR_1", "opmarDelta_1"]
    subsets = variable_subsets(names)
    assert len(subsets) == 127
    assert subsets[0] == ("sales",)
    assert len(variable_subsets(names[:3], lags=(1, 2))) == 7 + 2
    assert variable_subsets(["at"], lags=(1,))[1] == ("at", "salesGR_1", "opmarDelta_1")


def test_lagged_sets_extend_balance_sheet_and_full_sets():
    subsets = variable_subsets(list(CONTEMPORANEOUS), lags=(1, 3, 5, 10))
    assert len(subsets) == 127 + 8
    extended = subsets[127:]
    assert extended[0] == ("sales", "opmar", "at", "seq", "salesGR_1", "opmarDelta_1")
    assert extended[3] == ("sales", "opmar", "at", "seq") + tuple(lagged_variables(10))
    assert extended[4] == CONTEMPORANEOUS + ("salesGR_1", "opmarDelta_1")
    assert extended[7] == CONTEMPORANEOUS + tuple(lagged_variables(10))
    # 60 rank deviation options per set
    assert len(subsets) * RD_GRID_SIZE == 8100


def test_brute_force_cap():
    names = ["sales", "opmar", "at", "seq", "beta", "salesGR_1", "opmarDelta_1", "salesGR_2"]
    with pytest.raises(ConfigError):
        brute_force(growing_panel(), 1, names, BacktestConfig())


def test_brute_force_ranks_every_subset(synthetic):
    config = BacktestConfig(windows=[5], sizes=[0.05], combinations=["lard"])
    results = brute_force(synthetic.panel, 1, ["opmar", "at"], config)
    assert sorted(r.entry.variables for r in results) == [("at",), ("opmar",), ("opmar", "at")]
    dqs = [r.report.delta_q for r in results]
    assert dqs == sorted(dqs)


def test_rank_results_puts_unusable_last():
    panel = growing_panel()
    good = run_config(panel, BacktestEntry(1, 3, ("opmar",), _climate()))
    bad = run_config(panel, BacktestEntry(1, 3, ("opmar",), _climate(min_size=100)))
    assert rank_results([bad, good]) == [good, bad]


def test_results_frame_columns():
    result = run_config(growing_panel(), BacktestEntry(1, 3, ("opmar",), SelectorConfig(size=0.1)))
    frame = results_frame([result])
    assert frame.columns.tolist() == RESULT_COLUMNS
    row = frame.iloc[0]
    assert row["algorithm"] == "rank_deviation"
    assert row["combination"] == "lard"
    assert row["correction"] == ""
    assert row["m"] == 510


def test_result_store_resumes(tmp_path):
    path = tmp_path / "results.csv"
    config = BacktestConfig(horizons=[1], windows=[3], algorithms=["market_climate", "group_major"], variable_sets=[["opmar"]])
    panel = growing_panel()
    first = run_backtest(panel, config, ResultStore(path))
    assert len(first) == 2
    assert len(pd.read_csv(path)) == 2
    assert run_backtest(panel, config, ResultStore(path)) == []
    assert len(pd.read_csv(path)) == 2
    again = run_backtest(panel, config, ResultStore(path, resume=False))
    assert len(again) == 2
    assert len(pd.read_csv(path)) == 2


@pytest.mark.slow
def test_forward_selection(synthetic):
    config = BacktestConfig(windows=[10], sizes=[0.05], combinations=["lard"])
    search = forward_selection(synthetic.panel, 1, ["opmar", "at", "seq", "beta"], config)
    assert len(search.stages) >= 2
    assert len(search.stages[0].best) == 3
    for stage in search.stages:
        assert all(len(variables) == stage.index + 1 for variables, _ in stage.best)
        dqs = [r.report.delta_q for _, r in stage.best]
        assert dqs == sorted(dqs)
    variables, best = search.best
    assert best.report.delta_q == min(s.best_dq for s in search.stages)


def test_forward_selection_from_seeds(synthetic):
    config = BacktestConfig(windows=[5], sizes=[0.05], combinations=["lard"])
    search = forward_selection(synthetic.panel, 1, ["opmar", "at"], config, seeds=[["opmar"]])
    assert search.stages[0].best[0][0] == ("opmar",)
    assert search.stages[1].best[0][0] == ("opmar", "at")
    assert len(search.stages) == 2


def test_equal_scores_rank_by_configuration():
    scores = CalibrationReport(100, 0.1, 1.0, 0.1)
    a = BacktestResult(BacktestEntry(1, 5, ("opmar",), _climate()), scores, eligible=100)
    b = BacktestResult(BacktestEntry(1, 10, ("opmar",), _climate()), scores, eligible=100)
    first = min((a, b), key=lambda r: r.entry.key())
    assert rank_results([a, b])[0] is first
    assert rank_results([b, a])[0] is first


def test_brute_force_resumes_from_stored_rows(synthetic, tmp_path, monkeypatch):
    config = BacktestConfig(windows=[5], sizes=[0.05], combinations=["lard"])
    path = tmp_path / "search.runs.csv"
    (partial,) = brute_force(synthetic.panel, 1, ["opmar"], config, store=ResultStore(path))
    assert len(pd.read_csv(path)) == 1

    calls = []
    run = BacktestRunner.run

    def counting(self, entry):
        calls.append(entry.variables)
        return run(self, entry)

    monkeypatch.setattr(BacktestRunner, "run", counting)
    full = brute_force(synthetic.panel, 1, ["opmar", "at"], config, store=ResultStore(path))
    assert sorted(calls) == [("at",), ("opmar", "at")]
    assert len(pd.read_csv(path)) == 3
    resumed = next(r for r in full if r.entry.variables == ("opmar",))
    assert resumed.m == partial.m
    assert resumed.eligible == partial.eligible
    assert resumed.report.delta_q == pytest.approx(partial.report.delta_q)

    calls.clear()
    again = brute_force(synthetic.panel, 1, ["opmar", "at"], config, store=ResultStore(path))
    assert calls == []
    assert sorted(r.entry.variables for r in again) == sorted(r.entry.variables for r in full)
    assert [r.report.delta_q for r in again] == sorted(r.report.delta_q for r in again)


@pytest.mark.slow
def test_selectors_agree_when_outcomes_are_independent():
    # growth ignores every variable, so each class is a draw from the same law
    panel = generate(synthetic_spec(firms=300, years=34, loc_coef={}, seed=21)).panel
    selectors = [
        SelectorConfig(algorithm=Algorithm.market_climate),
        SelectorConfig(algorithm=Algorithm.group_major),
        SelectorConfig(size=0.2),
    ]
    with BacktestRunner(panel, workers=2) as runner:
        results = [runner.run(BacktestEntry(1, 30, ("opmar",), s)) for s in selectors]
    assert all(r.m == 900 for r in results)
    dqs = [r.report.delta_q for r in results]
    assert max(dqs) <= 2 * min(dqs)


@pytest.mark.slow
def test_forward_selection_keeps_the_driving_variable():
    synthetic = generate(synthetic_spec(firms=300, years=40, loc_coef={"opmar": 0.6}, seed=3))
    config = BacktestConfig(windows=[20], sizes=[0.05], combinations=["lard"], workers=2)
    search = forward_selection(synthetic.panel, 1, ["opmar", "at", "seq", "beta"], config)
    assert search.stages[0].best[0][0] == ("opmar",)
    assert len(search.stages) >= 2
    for stage in search.stages[1:]:
        assert all("opmar" in variables for variables, _ in stage.best)
