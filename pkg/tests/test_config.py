import pytest
from pydantic import ValidationError

from config import PRESETS, BacktestConfig, ForecastConfig, lagged_variables, preset
from errors import ConfigError
from panel_store import CONTEMPORANEOUS
from selection import Algorithm, Combination


PRESET_ROWS = {
    # horizon table top rows: variables, transform, PC rule, combination, correction, w, size
    "best-h1": (list(CONTEMPORANEOUS) + ["salesGR_1", "opmarDelta_1"], "ranks", "3", "union", True, 30, 0.01),
    "best-h3": (list(CONTEMPORANEOUS) + lagged_variables(3), "trim", "3", "union", True, 20, 0.01),
    "best-h5": (list(CONTEMPORANEOUS) + lagged_variables(5), "trim", "2", "union", True, 30, 0.01),
    "best-h10": (["sales", "opmar", "at", "seq"] + lagged_variables(5), "trim", "2", "union", True, 30, 0.01),
}


@pytest.mark.parametrize("name", sorted(PRESET_ROWS))
def test_presets_match_best_rows(name):
    variables, transform, rule, combination, correction, window, size = PRESET_ROWS[name]
    config = preset(name)
    assert config.variables == variables
    assert config.selector.algorithm is Algorithm.pca_rank_deviation
    assert config.selector.transform.value == transform
    assert config.selector.pc_rule == rule
    assert config.selector.combination.value == combination
    assert config.selector.correction is correction
    assert config.window == window
    assert config.selector.size == size


def test_presets():
    best = preset("best-h3")
    assert best.window == 20
    assert best.selector.algorithm is Algorithm.pca_rank_deviation
    assert best.selector.combination is Combination.union and best.selector.correction
    assert best.selector.transform.value == "trim"
    assert best.variables[-1] == "opmarDelta_3"
    assert set(PRESETS) == {"best-h1", "best-h3", "best-h5", "best-h10"}
    assert len(preset("best-h1").variables) == 9
    with pytest.raises(ConfigError):
        preset("best-h2")


def test_lagged_variables():
    assert lagged_variables(2) == ["salesGR_1", "salesGR_2", "opmarDelta_1", "opmarDelta_2"]
    assert lagged_variables(0) == []


def test_forecast_config_validates_variables():
    assert ForecastConfig(variables=["opmar", "salesGR_2"]).variables == ["opmar", "salesGR_2"]
    with pytest.raises(ValidationError):
        ForecastConfig(variables=[])
    with pytest.raises(ValidationError):
        ForecastConfig(variables=["ebitda"])
    with pytest.raises(ValidationError):
        ForecastConfig(window=0)


def test_backtest_config_defaults():
    config = BacktestConfig()
    assert config.horizons == [1, 3, 5, 10]
    assert config.windows == [5, 10, 20, 30]
    assert config.pc_rules == ["2", "3", "75%", "90%", "mean"]
    assert config.algorithms == [Algorithm.rank_deviation]


def test_backtest_config_rejects_bad_grids():
    with pytest.raises(ValidationError):
        BacktestConfig(combinations=["union+fix"])
    with pytest.raises(ValidationError):
        BacktestConfig(combinations=["median"])
    with pytest.raises(ValidationError):
        BacktestConfig(windows=[])
    with pytest.raises(ValidationError):
        BacktestConfig(workers=0)
    assert BacktestConfig(pc_rules=["0.9"]).pc_rules == ["90%"]


def test_backtest_config_load_and_dump(tmp_path):
    path = tmp_path / "backtest.json"
    BacktestConfig(horizons=[1], variable_sets=[["opmar", "at"]], workers=3).dump(path)
    loaded = BacktestConfig.load(path)
    assert loaded.horizons == [1]
    assert loaded.variable_sets == [["opmar", "at"]]
    assert loaded.workers == 3
    path.write_text('{"horizons": "soon"}')
    with pytest.raises(ConfigError):
        BacktestConfig.load(path)
    with pytest.raises(ConfigError):
        BacktestConfig.load(tmp_path / "absent.json")


def test_backtest_config_keeps_seed_and_rejects_unknown_keys(tmp_path):
    path = tmp_path / "backtest.json"
    path.write_text('{"panel": "panel.csv", "seed": 7}')
    assert BacktestConfig.load(path).seed == 7
    assert BacktestConfig().seed is None
    path.write_text('{"panel": "panel.csv", "windw": [5]}')
    with pytest.raises(ConfigError):
        BacktestConfig.load(path)
