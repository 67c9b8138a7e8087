"""Configuration models: forecast setups, presets and backtest runs."""
import json
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import ConfigError
from panel_store import BALANCE_SHEET, CONTEMPORANEOUS, DEFAULT_END_YEAR, DEFAULT_START_YEAR, VariableKey
from pca_engine import PC_RULES, PcCountRule, Transform
from selection import Algorithm, Combination, SelectorConfig

DEFAULT_HORIZONS = [1, 3, 5, 10]
DEFAULT_WINDOWS = [5, 10, 20, 30]
DEFAULT_SIZES = [0.05, 0.025, 0.01]
# combination x correction variants of the rank deviation grid
DEFAULT_COMBINATIONS = ["lard", "union", "union+cor", "intersection", "intersection+cor"]


def _check_variables(names: List[str]) -> List[str]:
    try:
        return [VariableKey.parse(n).name for n in names]
    except ValueError as e:
        raise ValueError(str(e)) from e


class ForecastConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    selector: SelectorConfig = SelectorConfig()
    window: int = Field(30, ge=1)
    variables: List[str] = ["sales"]

    @field_validator("variables")
    @classmethod
    def _known_variables(cls, value):
        if not value:
            raise ValueError("at least one reference variable is required")
        return _check_variables(value)


def lagged_variables(k: int) -> List[str]:
    """salesGR_1..k and opmarDelta_1..k."""
    return [f"salesGR_{i}" for i in range(1, k + 1)] + [f"opmarDelta_{i}" for i in range(1, k + 1)]


def _pca_union(transform: str, rule: str, window: int, variables: List[str]) -> ForecastConfig:
    selector = SelectorConfig(
        algorithm=Algorithm.pca_rank_deviation,
        transform=transform,
        pc_rule=rule,
        combination=Combination.union,
        correction=True,
        size=0.01,
    )
    return ForecastConfig(selector=selector, window=window, variables=variables)


PRESETS = {
    "best-h1": _pca_union("ranks", "3", 30, list(CONTEMPORANEOUS) + lagged_variables(1)),
    "best-h3": _pca_union("trim", "3", 20, list(CONTEMPORANEOUS) + lagged_variables(3)),
    "best-h5": _pca_union("trim", "2", 30, list(CONTEMPORANEOUS) + lagged_variables(5)),
    "best-h10": _pca_union("trim", "2", 30, list(BALANCE_SHEET) + lagged_variables(5)),
}


def preset(name: str) -> ForecastConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset '{name}', choose from {', '.join(PRESETS)}")


class BacktestConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    panel: Optional[str] = None
    cpi: Optional[str] = None
    base_index: float = 100.0
    output: str = "results.csv"
    horizons: List[int] = DEFAULT_HORIZONS
    windows: List[int] = DEFAULT_WINDOWS
    sizes: List[float] = DEFAULT_SIZES
    algorithms: List[Algorithm] = [Algorithm.rank_deviation]
    combinations: List[str] = DEFAULT_COMBINATIONS
    transforms: List[Transform] = list(Transform)
    pc_rules: List[str] = list(PC_RULES)
    variable_sets: List[List[str]] = [["sales"]]
    start_year: int = DEFAULT_START_YEAR
    end_year: int = DEFAULT_END_YEAR
    workers: int = Field(1, ge=1)
    brute_force_cap: int = Field(7, ge=1)
    checkpoint: bool = True
    min_size: int = Field(20, ge=1)
    # recorded with the run; scoring draws no random numbers
    seed: Optional[int] = None

    @field_validator("horizons", "windows", "sizes", "algorithms", "combinations", "transforms", "pc_rules", "variable_sets")
    @classmethod
    def _not_empty(cls, value):
        if not value:
            raise ValueError("grid entries must not be empty")
        return value

    @field_validator("combinations")
    @classmethod
    def _known_combinations(cls, value):
        for entry in value:
            base, _, suffix = entry.partition("+")
            Combination(base)
            if suffix not in ("", "cor"):
                raise ValueError(f"unknown combination variant '{entry}'")
        return value

    @field_validator("pc_rules")
    @classmethod
    def _known_rules(cls, value):
        return [PcCountRule.parse(v).label for v in value]

    @field_validator("variable_sets")
    @classmethod
    def _known_sets(cls, value):
        return [_check_variables(names) for names in value]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BacktestConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            return cls.model_validate_json(path.read_text())
        except ValidationError as e:
            raise ConfigError(f"invalid backtest config {path}: {e}") from e

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.model_dump(mode="json"), indent=2))
