"""Distributional forecasts from reference classes.

A forecast is the sorted sample of the class outcomes (h-year sales growth in
percent). It answers ECDF queries, quantiles, intervals, PIT values of
realisations or analyst estimates, and the CAGR base-rate table.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import ForecastConfig
from errors import DomainError, SelectionError, UnknownFirmError
from panel_store import FirmYear, Panel, growth_to_cagr, trimmed_mean, trimmed_std
from selection import ForecastCase, ReferenceClass, build_candidates, select_reference_class, target_of
from stats_core import Ecdf, empirical_quantile, empirical_quantiles

logger = logging.getLogger(__name__)

REPORT_QUANTILES = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)
TRACK_QUANTILES = (0.10, 0.25, 0.50, 0.75, 0.90)
BIN_EDGES = tuple(float(e) for e in range(-25, 50, 5))
TRIM = 0.025
WARN_LOW = 0.05
WARN_HIGH = 0.95


def _bin_labels() -> List[str]:
    labels = [f"<= {BIN_EDGES[0]:g}"]
    labels += [f"({lo:g}, {hi:g}]" for lo, hi in zip(BIN_EDGES[:-1], BIN_EDGES[1:])]
    labels.append(f"> {BIN_EDGES[-1]:g}")
    return labels


BIN_LABELS = tuple(_bin_labels())


@dataclass(frozen=True)
class DistributionalForecast:
    outcomes: np.ndarray
    horizon: int
    case: Optional[FirmYear] = None
    candidate_count: Optional[int] = None
    provenance: str = ""

    def __post_init__(self):
        values = np.sort(np.asarray(self.outcomes, dtype=float), kind="stable")
        if values.size == 0:
            raise DomainError("a forecast needs at least one outcome")
        if np.isnan(values).any():
            raise DomainError("reference class outcomes contain missing values")
        if values[0] < -100.0:
            raise DomainError(f"sales growth below -100% in reference class: {values[0]}")
        values.setflags(write=False)
        object.__setattr__(self, "outcomes", values)

    @property
    def n(self) -> int:
        return int(self.outcomes.size)

    @cached_property
    def ecdf(self) -> Ecdf:
        return Ecdf(sorted_sample=self.outcomes, n=self.n)

    def cdf(self, y: float) -> float:
        return self.ecdf(y)

    def quantile(self, alpha: float) -> float:
        return empirical_quantile(self.ecdf, alpha)

    def quantiles(self, levels: Sequence[float] = REPORT_QUANTILES) -> np.ndarray:
        return empirical_quantiles(self.outcomes, levels)

    def interval(self, level: float = 0.9):
        """Central prediction interval covering `level` of the class mass."""
        if not 0.0 < level < 1.0:
            raise DomainError(f"interval level must be in (0, 1), got {level}")
        tail = (1.0 - level) / 2.0
        return self.quantile(tail), self.quantile(1.0 - tail)

    def probability(self, lower: float, upper: float) -> float:
        """Forecast probability of growth in (lower, upper]."""
        if upper < lower:
            raise DomainError("upper bound below lower bound")
        return self.cdf(upper) - self.cdf(lower)

    def point_estimates(self) -> dict:
        return {
            "median": self.quantile(0.5),
            "trimmed_mean": trimmed_mean(self.outcomes, TRIM),
            "mean": float(self.outcomes.mean()),
        }


@dataclass(frozen=True)
class EstimateAssessment:
    estimates: np.ndarray
    pits: np.ndarray
    coverage: float
    warning: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"estimate_pct": self.estimates, "pit": self.pits})


@dataclass(frozen=True)
class BaseRateTable:
    horizon: int
    n: int
    masses: np.ndarray
    trimmed_mean: float
    median: float
    trimmed_std: float
    q025: float
    q975: float
    labels: tuple = field(default=BIN_LABELS)

    def rows(self) -> List[tuple]:
        rows = [(label, float(m)) for label, m in zip(self.labels, self.masses)]
        rows += [
            ("mean", self.trimmed_mean),
            ("median", self.median),
            ("std", self.trimmed_std),
            ("q0.025", self.q025),
            ("q0.975", self.q975),
        ]
        return rows

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=["cagr_pct", f"{self.horizon}-yr"])


def make_forecast(ref_class: ReferenceClass, horizon: int, case: Optional[FirmYear] = None) -> DistributionalForecast:
    return DistributionalForecast(
        outcomes=ref_class.outcomes,
        horizon=horizon,
        case=case,
        candidate_count=ref_class.candidate_count,
        provenance=ref_class.provenance,
    )


def pit(forecast: DistributionalForecast, realized: float) -> float:
    return forecast.cdf(realized)


def assess_estimates(
    forecast: DistributionalForecast,
    estimates: Iterable[float],
    low: float = WARN_LOW,
    high: float = WARN_HIGH,
) -> EstimateAssessment:
    values = np.asarray(list(estimates), dtype=float)
    if values.size == 0:
        raise DomainError("no estimates to assess")
    if np.isnan(values).any():
        raise DomainError("estimates contain missing values")
    pits = np.array([forecast.cdf(v) for v in values])
    # mass in [min estimate, max estimate], both ends included
    coverage = forecast.cdf(values.max()) - forecast.ecdf.left_limit(values.min())
    warning = bool((pits < low).any() or (pits > high).any())
    return EstimateAssessment(estimates=values, pits=pits, coverage=float(coverage), warning=warning)


def base_rates(forecast: DistributionalForecast) -> BaseRateTable:
    if forecast.horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {forecast.horizon}")
    rates = np.sort(growth_to_cagr(forecast.outcomes, forecast.horizon))
    bins = np.searchsorted(np.array(BIN_EDGES), rates, side="left")
    counts = np.bincount(bins, minlength=len(BIN_EDGES) + 1)
    return BaseRateTable(
        horizon=forecast.horizon,
        n=int(rates.size),
        masses=counts / rates.size * 100.0,
        trimmed_mean=trimmed_mean(rates, TRIM),
        median=float(empirical_quantiles(rates, [0.5])[0]),
        trimmed_std=trimmed_std(rates, TRIM) if rates.size > 1 else 0.0,
        q025=float(empirical_quantiles(rates, [0.025])[0]),
        q975=float(empirical_quantiles(rates, [0.975])[0]),
    )


def realized_growth(panel: Panel, firm_id: str, year: int, horizon: int) -> Optional[float]:
    row = panel.row_of(firm_id, year)
    if row is None:
        return None
    value = panel.outcome(horizon)[row]
    return None if np.isnan(value) else float(value)


def forecast_case(panel: Panel, firm_id: str, year: int, horizon: int, config: ForecastConfig) -> DistributionalForecast:
    """Candidates, reference class and forecast for one firm-year."""
    case = ForecastCase(FirmYear(firm_id, year), horizon, tuple(config.variables), config.window)
    cands = build_candidates(panel, case, config.selector.availability)
    ref_class = select_reference_class(cands, target_of(panel, case), config.selector)
    logger.debug("%s: class of %d from %d candidates (%s)", case.target, len(ref_class), cands.n, ref_class.provenance)
    return DistributionalForecast(
        outcomes=ref_class.outcomes,
        horizon=horizon,
        case=case.target,
        candidate_count=cands.n,
        provenance=ref_class.provenance,
    )


@dataclass(frozen=True)
class TrackRecord:
    year: int
    quantiles: Optional[tuple] = None
    realized: Optional[float] = None
    class_size: Optional[int] = None
    skipped: Optional[str] = None


def historic_track(
    panel: Panel,
    firm_id: str,
    years: Iterable[int],
    horizon: int,
    config: ForecastConfig,
) -> List[TrackRecord]:
    if not panel.has_firm(firm_id):
        raise UnknownFirmError(f"firm '{firm_id}' is not in the panel")
    records = []
    for year in years:
        if panel.row_of(firm_id, year) is None:
            records.append(TrackRecord(year, skipped="no_observation"))
            continue
        realized = realized_growth(panel, firm_id, year, horizon)
        try:
            forecast = forecast_case(panel, firm_id, year, horizon, config)
        except SelectionError as e:
            logger.info("track %s/%d skipped: %s", firm_id, year, e)
            records.append(TrackRecord(year, realized=realized, skipped=e.reason))
            continue
        records.append(
            TrackRecord(
                year,
                quantiles=tuple(float(q) for q in forecast.quantiles(TRACK_QUANTILES)),
                realized=realized,
                class_size=forecast.n,
            )
        )
    return records


def track_frame(records: Sequence[TrackRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        row = {"year": r.year, "realized": r.realized, "class_size": r.class_size, "skipped": r.skipped or ""}
        for level, q in zip(TRACK_QUANTILES, r.quantiles or (None,) * len(TRACK_QUANTILES)):
            row[f"q{int(round(level * 100))}"] = q
        rows.append(row)
    return pd.DataFrame(rows)
