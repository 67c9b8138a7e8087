"""Backtests of reference-class selectors and the variable-set searches built on them.

A configuration is scored on every eligible case of the panel: candidates are
built once per base year, each case gets its reference class and forecast,
and the PIT of the realised growth goes into one sample per configuration.
Worker processes receive the panel once through the pool initializer and
return per-year PIT arrays that are merged in year order, so the scores do
not depend on the number of workers.
"""
import itertools
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from calibration import CalibrationReport, PitSample, report
from config import DEFAULT_COMBINATIONS, DEFAULT_SIZES, DEFAULT_WINDOWS, BacktestConfig, lagged_variables
from errors import ConfigError, SelectionError
from forecast import make_forecast, pit
from panel_store import BALANCE_SHEET, FirmYear, Panel, VariableKey
from pca_engine import PC_RULES, Transform
from selection import (
    Algorithm,
    Availability,
    Combination,
    ForecastCase,
    SelectorConfig,
    Target,
    build_candidates,
    rotate,
    select_reference_class,
)

logger = logging.getLogger(__name__)

RD_GRID_SIZE = 60
PCA_GRID_SIZE = 1200
SEARCH_WIDTH = 3
# skip reason of resumed results; the CSV keeps only the total
STORED_SKIPS = "stored"

RESULT_COLUMNS = [
    "horizon", "algorithm", "ref_var", "transform", "n_pc", "combination", "correction",
    "w", "size", "dq", "ks", "cvm", "m", "skipped", "key",
]


@dataclass(frozen=True)
class BacktestEntry:
    """One point of the option grid: selector, window and reference variables for a horizon."""

    horizon: int
    window: int
    variables: Tuple[str, ...]
    selector: SelectorConfig

    def key(self) -> str:
        return json.dumps(
            {
                "h": self.horizon,
                "w": self.window,
                "vars": list(self.variables),
                "selector": self.selector.model_dump(mode="json"),
            },
            sort_keys=True,
        )

    def row(self) -> dict:
        s = self.selector
        pca = s.algorithm is Algorithm.pca_rank_deviation
        return {
            "horizon": self.horizon,
            "algorithm": s.algorithm.value,
            "ref_var": " ".join(self.variables),
            "transform": s.transform.value if pca else "",
            "n_pc": s.pc_rule if pca else "",
            "combination": s.combination.value if s.uses_size else "",
            "correction": ("yes" if s.correction else "no") if s.uses_size and s.combination is not Combination.lard else "",
            "w": self.window,
            "size": s.size if s.uses_size else "",
        }


@dataclass
class BacktestResult:
    entry: BacktestEntry
    report: CalibrationReport
    eligible: int
    skip_reasons: Dict[str, int] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.report.m

    @property
    def skipped(self) -> int:
        return sum(self.skip_reasons.values())

    @property
    def usable(self) -> bool:
        return self.report.usable

    def sort_key(self) -> tuple:
        return (not self.usable, self.report.delta_q if self.usable else math.inf, self.entry.key())

    def row(self) -> dict:
        r = self.entry.row()
        r.update(dq=self.report.delta_q, ks=self.report.ks, cvm=self.report.cvm, m=self.m, skipped=self.skipped)
        r["key"] = self.entry.key()
        return r


def _variant(text: str) -> Tuple[Combination, bool]:
    base, _, suffix = text.partition("+")
    return Combination(base), suffix == "cor"


def _is_full_grid(windows, sizes, combinations) -> bool:
    return (list(windows), list(sizes), list(combinations)) == (DEFAULT_WINDOWS, DEFAULT_SIZES, DEFAULT_COMBINATIONS)


def rank_deviation_options(
    windows: Sequence[int] = DEFAULT_WINDOWS,
    sizes: Sequence[float] = DEFAULT_SIZES,
    combinations: Sequence[str] = DEFAULT_COMBINATIONS,
) -> List[Tuple[int, float, Combination, bool]]:
    options = [(w, c) + _variant(v) for w in windows for c in sizes for v in combinations]
    if _is_full_grid(windows, sizes, combinations):
        assert len(options) == RD_GRID_SIZE, len(options)
    return options


def pca_options(
    windows: Sequence[int] = DEFAULT_WINDOWS,
    sizes: Sequence[float] = DEFAULT_SIZES,
    combinations: Sequence[str] = DEFAULT_COMBINATIONS,
    transforms: Sequence[Transform] = tuple(Transform),
    pc_rules: Sequence[str] = PC_RULES,
) -> List[Tuple[int, float, Combination, bool, Transform, str]]:
    options = [
        o + (Transform(t), r)
        for o in rank_deviation_options(windows, sizes, combinations)
        for t in transforms
        for r in pc_rules
    ]
    full = _is_full_grid(windows, sizes, combinations) and set(transforms) == set(Transform) and list(pc_rules) == list(PC_RULES)
    if full:
        assert len(options) == PCA_GRID_SIZE, len(options)
    return options


def option_grid(config: BacktestConfig, horizon: int, variables: Sequence[str]) -> List[BacktestEntry]:
    """Every configuration the backtest config asks for, in a fixed order."""
    variables = tuple(variables)
    floor = config.min_size
    entries = []
    for algorithm in config.algorithms:
        if algorithm is Algorithm.rank_deviation:
            for w, c, comb, cor in rank_deviation_options(config.windows, config.sizes, config.combinations):
                selector = SelectorConfig(algorithm=algorithm, size=c, combination=comb, correction=cor, min_size=floor)
                entries.append(BacktestEntry(horizon, w, variables, selector))
        elif algorithm is Algorithm.pca_rank_deviation:
            if len(variables) < 2:
                logger.info("PCA options need two or more reference variables, skipping for %s", variables)
                continue
            for w, c, comb, cor, t, r in pca_options(
                config.windows, config.sizes, config.combinations, config.transforms, config.pc_rules
            ):
                selector = SelectorConfig(
                    algorithm=algorithm, size=c, combination=comb, correction=cor, transform=t, pc_rule=r, min_size=floor
                )
                entries.append(BacktestEntry(horizon, w, variables, selector))
        else:
            for w in config.windows:
                entries.append(BacktestEntry(horizon, w, variables, SelectorConfig(algorithm=algorithm, min_size=floor)))
    return entries


def _eligible_rows(panel: Panel, horizon: int, window: int, variables: Sequence[Union[str, VariableKey]]) -> np.ndarray:
    first = panel.start_year + window + horizon - 1
    last = panel.end_year - horizon
    years = panel.years
    mask = (years >= first) & (years <= last) & ~np.isnan(panel.outcome(horizon))
    for v in variables:
        mask &= ~np.isnan(panel.values(v))
    rows = np.flatnonzero(mask)
    return rows[np.lexsort((panel.firm_codes[rows], years[rows]))]


def enumerate_cases(panel: Panel, horizon: int, window: int, variables: Sequence[str]) -> List[ForecastCase]:
    """Eligible forecast cases ordered by (year, firm_id)."""
    rows = _eligible_rows(panel, horizon, window, variables)
    return [
        ForecastCase(FirmYear(str(panel.firm_ids[r]), int(panel.years[r])), horizon, tuple(variables), window)
        for r in rows
    ]


# worker state; set by the pool initializer or in-process for a single worker
_PANEL: Optional[Panel] = None


def _init_worker(panel: Panel) -> None:
    global _PANEL
    _PANEL = panel
    _candidates.cache_clear()
    _rotation.cache_clear()


@lru_cache(maxsize=64)
def _candidates(year: int, horizon: int, window: int, variables: Tuple[str, ...], availability: Availability):
    case = ForecastCase(FirmYear("", year), horizon, variables, window)
    return build_candidates(_PANEL, case, availability)


@lru_cache(maxsize=64)
def _rotation(year: int, horizon: int, window: int, variables: Tuple[str, ...], transform, pc_rule: str, trim_stats):
    selector = SelectorConfig(
        algorithm=Algorithm.pca_rank_deviation, transform=transform, pc_rule=pc_rule, trim_stats=trim_stats
    )
    cands = _candidates(year, horizon, window, variables, selector.availability)
    return rotate(cands, selector)


def _target(panel: Panel, row: int, variables: Sequence[str]) -> Target:
    values = np.array([panel.values(v)[row] for v in variables], dtype=float)
    sic = panel.values("sic")[row] if panel.has_column("sic") else np.nan
    sales = panel.values("sales")[row] if panel.has_column("sales") else np.nan
    key = FirmYear(str(panel.firm_ids[row]), int(panel.years[row]))
    return Target(key, values, None if np.isnan(sic) else float(sic), None if np.isnan(sales) else float(sales))


def _evaluate_year(entry: BacktestEntry, year: int, rows: np.ndarray) -> Tuple[np.ndarray, Counter]:
    panel = _PANEL
    selector = entry.selector
    skipped = Counter()
    try:
        cands = _candidates(year, entry.horizon, entry.window, entry.variables, selector.availability)
        rotation = None
        if selector.algorithm is Algorithm.pca_rank_deviation:
            rotation = _rotation(
                year, entry.horizon, entry.window, entry.variables,
                selector.transform, selector.pc_rule, selector.trim_stats,
            )
    except SelectionError as e:
        logger.debug("year %d skipped for %s: %s", year, selector.label(), e)
        skipped[e.reason] += len(rows)
        return np.empty(0), skipped

    realized = panel.outcome(entry.horizon)
    pits = []
    for row in rows:
        target = _target(panel, row, entry.variables)
        try:
            ref_class = select_reference_class(cands, target, selector, rotation)
        except SelectionError as e:
            logger.debug("case %s skipped: %s", target.key, e)
            skipped[e.reason] += 1
            continue
        pits.append(pit(make_forecast(ref_class, entry.horizon, target.key), realized[row]))
    return np.array(pits, dtype=float), skipped


class BacktestRunner:
    """Evaluates backtest entries over one panel, optionally with worker processes."""

    def __init__(self, panel: Panel, workers: int = 1):
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        self.panel = panel
        self.workers = workers
        self._executor = None

    def __enter__(self):
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(
                max_workers=self.workers,
                initializer=_init_worker,
                initargs=(self.panel,),
            )
        else:
            _init_worker(self.panel)
        return self

    def __exit__(self, *exc):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def run(self, entry: BacktestEntry) -> BacktestResult:
        rows = _eligible_rows(self.panel, entry.horizon, entry.window, entry.variables)
        years = self.panel.years[rows]
        groups = [(int(y), rows[years == y]) for y in np.unique(years)]
        if self._executor is not None:
            futures = [self._executor.submit(_evaluate_year, entry, y, r) for y, r in groups]
            outcomes = [f.result() for f in futures]
        else:
            if _PANEL is not self.panel:
                _init_worker(self.panel)
            outcomes = [_evaluate_year(entry, y, r) for y, r in groups]

        sample = PitSample()
        reasons = Counter()
        for pits, skipped in outcomes:
            sample.add(pits)
            reasons.update(skipped)
        result = BacktestResult(entry, report(sample), eligible=int(rows.size), skip_reasons=dict(sorted(reasons.items())))
        if not result.usable:
            logger.warning("%s h=%d w=%d %s: no usable cases of %d", entry.selector.label(), entry.horizon, entry.window, entry.variables, rows.size)
        else:
            logger.info(
                "%s h=%d w=%d %s: dq=%.4f m=%d skipped=%d",
                entry.selector.label(), entry.horizon, entry.window, " ".join(entry.variables),
                result.report.delta_q, result.m, result.skipped,
            )
        return result


def run_config(panel: Panel, entry: BacktestEntry, workers: int = 1) -> BacktestResult:
    with BacktestRunner(panel, workers) as runner:
        return runner.run(entry)


def rank_results(results: Iterable[BacktestResult]) -> List[BacktestResult]:
    """Usable results by ascending dq; ties go by the serialized configuration."""
    return sorted(results, key=BacktestResult.sort_key)


def results_frame(results: Iterable[BacktestResult]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in results], columns=RESULT_COLUMNS)


class ResultStore:
    """Append-only results CSV; finished configurations are read back instead of recomputed."""

    def __init__(self, path: Union[str, Path], resume: bool = True):
        self.path = Path(path)
        self._rows: Dict[str, dict] = {}
        if resume and self.path.exists() and self.path.stat().st_size > 0:
            frame = pd.read_csv(self.path, dtype={"key": str}, float_precision="round_trip")
            for row in frame.drop_duplicates("key", keep="last").to_dict("records"):
                self._rows[row["key"]] = row
            logger.info("resuming from %s with %d finished configurations", self.path, len(self._rows))
        elif self.path.exists():
            self.path.unlink()

    def __contains__(self, entry: BacktestEntry) -> bool:
        return entry.key() in self._rows

    def __len__(self):
        return len(self._rows)

    def result(self, entry: BacktestEntry) -> BacktestResult:
        """The stored scores of a finished entry; skipped cases come back under one reason."""
        row = self._rows[entry.key()]
        m, skipped = int(row["m"]), int(row["skipped"])
        scores = CalibrationReport(m, float(row["dq"]), float(row["ks"]), float(row["cvm"]))
        return BacktestResult(entry, scores, eligible=m + skipped, skip_reasons={STORED_SKIPS: skipped} if skipped else {})

    def write(self, result: BacktestResult) -> None:
        header = not self.path.exists()
        results_frame([result]).to_csv(self.path, mode="a", header=header, index=False)
        self._rows[result.entry.key()] = result.row()


def _run_stored(runner: BacktestRunner, entry: BacktestEntry, store: Optional[ResultStore]) -> BacktestResult:
    if store is not None and entry in store:
        return store.result(entry)
    result = runner.run(entry)
    if store is not None:
        store.write(result)
    return result


def run_backtest(panel: Panel, config: BacktestConfig, store: Optional[ResultStore] = None) -> List[BacktestResult]:
    results = []
    with BacktestRunner(panel, config.workers) as runner:
        for horizon in config.horizons:
            for variables in config.variable_sets:
                for entry in option_grid(config, horizon, variables):
                    if store is not None and entry in store:
                        continue
                    result = runner.run(entry)
                    results.append(result)
                    if store is not None:
                        store.write(result)
    return rank_results(results)


def _search_config(config: BacktestConfig) -> BacktestConfig:
    return config.model_copy(update={"algorithms": [Algorithm.rank_deviation]})


def score_variable_set(
    runner: BacktestRunner,
    config: BacktestConfig,
    horizon: int,
    variables: Sequence[str],
    store: Optional[ResultStore] = None,
) -> Optional[BacktestResult]:
    """Best result of a variable set over the rank-deviation option grid."""
    ranked = rank_results(_run_stored(runner, e, store) for e in option_grid(_search_config(config), horizon, variables))
    best = ranked[0] if ranked else None
    return best if best is not None and best.usable else None


@dataclass
class SearchStage:
    index: int
    best: List[Tuple[Tuple[str, ...], BacktestResult]]

    @property
    def best_dq(self) -> float:
        return self.best[0][1].report.delta_q if self.best else math.inf


@dataclass
class SearchReport:
    horizon: int
    stages: List[SearchStage]

    @property
    def best(self) -> Optional[Tuple[Tuple[str, ...], BacktestResult]]:
        found = [s.best[0] for s in self.stages if s.best]
        return min(found, key=lambda item: item[1].report.delta_q) if found else None


def _top(scored: Dict[Tuple[str, ...], BacktestResult], width: int = SEARCH_WIDTH) -> List[Tuple[Tuple[str, ...], BacktestResult]]:
    return sorted(scored.items(), key=lambda item: item[1].sort_key())[:width]


def forward_selection(
    panel: Panel,
    horizon: int,
    pool: Sequence[str],
    config: BacktestConfig,
    seeds: Optional[Sequence[Sequence[str]]] = None,
    store: Optional[ResultStore] = None,
) -> SearchReport:
    """Greedy search: the three best sets of a stage are extended by every remaining pool variable.

    Stops when a stage fails to improve the best dq so far, after one more
    stage of lookahead. Without seeds, stage 0 scores every pool variable alone.
    With a store, every scored configuration is appended as it finishes and a
    rerun reads finished ones back.
    """
    pool = [VariableKey.parse(v).name for v in pool]
    stages = []
    with BacktestRunner(panel, config.workers) as runner:
        def score(sets: Iterable[Tuple[str, ...]]) -> Dict[Tuple[str, ...], BacktestResult]:
            scored = {}
            for s in sets:
                result = score_variable_set(runner, config, horizon, s, store)
                if result is not None:
                    scored[s] = result
            return scored

        if seeds is None:
            current = _top(score((v,) for v in pool))
        else:
            current = _top(score(tuple(VariableKey.parse(v).name for v in s) for s in seeds))
        stages.append(SearchStage(0, current))
        best_dq = stages[0].best_dq
        lookahead = False
        index = 0
        while current:
            index += 1
            seen = set()
            extensions = []
            for variables, _ in current:
                for v in pool:
                    if v in variables:
                        continue
                    extended = variables + (v,)
                    signature = frozenset(extended)
                    if signature not in seen:
                        seen.add(signature)
                        extensions.append(extended)
            if not extensions:
                break
            current = _top(score(extensions))
            stage = SearchStage(index, current)
            stages.append(stage)
            logger.info("forward selection h=%d stage %d: best dq %.4f", horizon, index, stage.best_dq)
            if stage.best_dq < best_dq:
                best_dq = stage.best_dq
                lookahead = False
            elif lookahead:
                break
            else:
                lookahead = True
    return SearchReport(horizon, stages)


def variable_subsets(variables: Sequence[str], lags: Sequence[int] = ()) -> List[Tuple[str, ...]]:
    """Non-empty subsets in size order, then lagged extensions of two base sets.

    Each lag depth k adds salesGR_1..k and opmarDelta_1..k to the balance-sheet
    variables among `variables` and to the whole of `variables`.
    """
    variables = [VariableKey.parse(v).name for v in variables]
    subsets = [s for k in range(1, len(variables) + 1) for s in itertools.combinations(variables, k)]
    bases = []
    for base in (tuple(v for v in variables if v in BALANCE_SHEET), tuple(variables)):
        if base and base not in bases:
            bases.append(base)
    extended = [tuple(dict.fromkeys(base + tuple(lagged_variables(k)))) for base in bases for k in lags]
    return subsets + extended


def brute_force(
    panel: Panel,
    horizon: int,
    variables: Sequence[str],
    config: BacktestConfig,
    lags: Sequence[int] = (),
    cap: Optional[int] = None,
    store: Optional[ResultStore] = None,
) -> List[BacktestResult]:
    cap = config.brute_force_cap if cap is None else cap
    if len(variables) > cap:
        raise ConfigError(f"brute force over {len(variables)} variables exceeds the cap of {cap}; raise brute_force_cap to override")
    subsets = variable_subsets(variables, lags)
    logger.info("brute force h=%d over %d variable sets", horizon, len(subsets))
    results = []
    with BacktestRunner(panel, config.workers) as runner:
        for subset in subsets:
            for entry in option_grid(config, horizon, subset):
                results.append(_run_stored(runner, entry, store))
    return rank_results(results)
