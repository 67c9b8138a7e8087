"""Firm-year panel: CSV ingestion, CPI deflation, derived growth variables.

A Panel never changes after construction. Derivations return a new Panel,
missing values are NaN cells and never sentinel numbers. Lagged columns and
outcomes are computed on first use under a lock, so threads may share a Panel.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from errors import (
    DataError,
    DomainError,
    IntegrityError,
    MissingYearsError,
    ParseError,
    UnknownFirmError,
)

logger = logging.getLogger(__name__)

DEFAULT_START_YEAR = 1950
DEFAULT_END_YEAR = 2019
MAX_LAG = 10


class VariableBase(str, Enum):
    sales = "sales"
    opmar = "opmar"
    at = "at"
    seq = "seq"
    sic = "sic"
    beta = "beta"
    pe = "pe"
    pb = "pb"
    salesGR = "salesGR"
    opmarDelta = "opmarDelta"


LAGGED_BASES = (VariableBase.salesGR, VariableBase.opmarDelta)
DOLLAR_BASES = (VariableBase.sales, VariableBase.at, VariableBase.seq)
# the seven contemporaneous reference variables, SIC excluded
CONTEMPORANEOUS = ("sales", "opmar", "at", "seq", "beta", "pe", "pb")
BALANCE_SHEET = ("sales", "opmar", "at", "seq")
PANEL_COLUMNS = ("firm_id", "year", "sic") + CONTEMPORANEOUS


@dataclass(frozen=True, order=True)
class FirmYear:
    firm_id: str
    year: int

    def __str__(self):
        return f"{self.firm_id}/{self.year}"


@dataclass(frozen=True)
class VariableKey:
    base: VariableBase
    lag: int = 0

    def __post_init__(self):
        base = VariableBase(self.base)
        object.__setattr__(self, "base", base)
        if base in LAGGED_BASES:
            if not 1 <= self.lag <= MAX_LAG:
                raise DomainError(f"{base.value} lag must be in [1, {MAX_LAG}], got {self.lag}")
        elif self.lag != 0:
            raise DomainError(f"{base.value} is contemporaneous, lag must be 0")

    @property
    def name(self) -> str:
        if self.base in LAGGED_BASES:
            return f"{self.base.value}_{self.lag}"
        return self.base.value

    @classmethod
    def parse(cls, text: Union[str, "VariableKey"]) -> "VariableKey":
        if isinstance(text, VariableKey):
            return text
        text = text.strip()
        if "_" in text:
            base, _, lag = text.rpartition("_")
            try:
                return cls(VariableBase(base), int(lag))
            except ValueError as e:
                raise DomainError(f"unknown variable '{text}'") from e
        try:
            base = VariableBase(text)
        except ValueError as e:
            raise DomainError(f"unknown variable '{text}'") from e
        if base in LAGGED_BASES:
            raise DomainError(f"variable '{text}' needs a lag, e.g. {text}_1")
        return cls(base)

    def __str__(self):
        return self.name


def parse_variables(names: Iterable[Union[str, VariableKey]]) -> list:
    return [VariableKey.parse(n) for n in names]


@dataclass(frozen=True)
class Observation:
    key: FirmYear
    sic: Optional[int]
    values: Dict[VariableKey, float] = field(default_factory=dict)


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return values


class Panel:
    """Immutable firm-year table indexed by firm and by year."""

    def __init__(
        self,
        frame: pd.DataFrame,
        start_year: int = DEFAULT_START_YEAR,
        end_year: int = DEFAULT_END_YEAR,
        source: Optional[str] = None,
        deflated: bool = False,
    ):
        if start_year > end_year:
            raise DomainError(f"start_year {start_year} after end_year {end_year}")
        frame = frame.copy()
        frame["firm_id"] = frame["firm_id"].astype(str)
        frame["year"] = frame["year"].astype(int)
        if "sic" not in frame:
            frame["sic"] = np.nan
        outside = (frame["year"] < start_year) | (frame["year"] > end_year)
        if outside.any():
            raise DataError(f"{int(outside.sum())} observations outside panel years [{start_year}, {end_year}]")
        dup = frame.duplicated(["firm_id", "year"], keep=False)
        if dup.any():
            first = frame.loc[dup, ["firm_id", "year"]].iloc[0]
            raise IntegrityError(f"duplicate firm-year ({first['firm_id']}, {first['year']})")
        for col in frame.columns:
            if col not in ("firm_id", "year"):
                frame[col] = frame[col].astype(float)
        frame = frame.sort_values(["firm_id", "year"], kind="stable").reset_index(drop=True)

        self.start_year = int(start_year)
        self.end_year = int(end_year)
        self.source = source
        self.deflated = deflated
        self._frame = frame
        self._firm_ids = _readonly(frame["firm_id"].to_numpy(dtype=object))
        # firm codes follow the sorted order of firm_id strings
        self._firm_codes = _readonly(pd.factorize(frame["firm_id"], sort=True)[0].astype(np.int64))
        self._years = _readonly(frame["year"].to_numpy(dtype=np.int64))
        self._columns = {c: _readonly(frame[c].to_numpy(dtype=float)) for c in frame.columns if c not in ("firm_id", "year")}
        self._index = pd.MultiIndex.from_arrays([self._firm_codes, self._years])
        self._derived: Dict[str, np.ndarray] = {}
        self._outcomes: Dict[int, np.ndarray] = {}
        self._lock = threading.RLock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    def __len__(self):
        return len(self._frame)

    def __repr__(self):
        return f"Panel({len(self)} observations, {self.n_firms} firms, {self.start_year}-{self.end_year})"

    @property
    def n_firms(self) -> int:
        return int(self._firm_codes.max()) + 1 if len(self) else 0

    @property
    def firm_ids(self) -> np.ndarray:
        return self._firm_ids

    @property
    def firm_codes(self) -> np.ndarray:
        return self._firm_codes

    @property
    def years(self) -> np.ndarray:
        return self._years

    @property
    def variable_names(self) -> list:
        return [c for c in self._columns if c != "sic"]

    def to_frame(self) -> pd.DataFrame:
        return self._frame.copy()

    def has_firm(self, firm_id: str) -> bool:
        return bool((self._firm_ids == firm_id).any())

    def row_of(self, firm_id: str, year: int) -> Optional[int]:
        rows = np.flatnonzero((self._firm_ids == firm_id) & (self._years == year))
        return int(rows[0]) if rows.size else None

    def observation(self, firm_id: str, year: int) -> Observation:
        row = self.row_of(firm_id, year)
        if row is None:
            raise UnknownFirmError(f"no observation for {firm_id}/{year}")
        values = {}
        for name, col in self._columns.items():
            if name == "sic" or np.isnan(col[row]):
                continue
            values[VariableKey.parse(name)] = float(col[row])
        sic = self._columns["sic"][row]
        return Observation(FirmYear(firm_id, year), None if np.isnan(sic) else int(sic), values)

    def shifted_rows(self, tau: int) -> np.ndarray:
        """Row position of (firm, year - tau) for every row, -1 where absent."""
        target = pd.MultiIndex.from_arrays([self._firm_codes, self._years - tau])
        return self._index.get_indexer(target)

    def has_column(self, name: str) -> bool:
        return name in self._columns

    def values(self, key: Union[str, VariableKey]) -> np.ndarray:
        """Column of a reference variable, deriving lagged growth variables on demand."""
        key = VariableKey.parse(key)
        name = key.name
        if name in self._columns:
            return self._columns[name]
        cached = self._derived.get(name)
        if cached is not None:
            return cached
        with self._lock:
            if name not in self._derived:
                if key.base is VariableBase.salesGR:
                    self._derived[name] = _readonly(_growth(self, key.lag))
                elif key.base is VariableBase.opmarDelta:
                    self._derived[name] = _readonly(_delta(self, key.lag))
                else:
                    raise DataError(f"panel has no column '{name}'")
            return self._derived[name]

    def outcome(self, horizon: int) -> np.ndarray:
        """Realised h-year sales growth Y_{j,s+h}, aligned to the row of (j, s)."""
        cached = self._outcomes.get(horizon)
        if cached is not None:
            return cached
        with self._lock:
            if horizon not in self._outcomes:
                growth = self.values(VariableKey(VariableBase.salesGR, horizon))
                ahead = self.shifted_rows(-horizon)
                out = np.full(len(self), np.nan)
                present = ahead >= 0
                out[present] = growth[ahead[present]]
                self._outcomes[horizon] = _readonly(out)
            return self._outcomes[horizon]

    def with_columns(self, columns: Mapping[str, np.ndarray], deflated: Optional[bool] = None) -> "Panel":
        frame = self._frame.copy()
        for name, values in columns.items():
            frame[name] = np.asarray(values, dtype=float)
        return Panel(
            frame,
            self.start_year,
            self.end_year,
            source=self.source,
            deflated=self.deflated if deflated is None else deflated,
        )

    def export_csv(self, path: Union[str, Path], lags: Iterable[int] = range(1, MAX_LAG + 1)) -> None:
        frame = self._frame.copy()
        for tau in lags:
            for base in LAGGED_BASES:
                key = VariableKey(base, tau)
                frame[key.name] = self.values(key)
        frame["sic"] = frame["sic"].astype("Int64")
        front = [c for c in PANEL_COLUMNS if c in frame]
        rest = [c for c in frame.columns if c not in front]
        frame[front + rest].to_csv(path, index=False, na_rep="", float_format="%.17g")
        logger.info("exported %d observations to %s", len(frame), path)


def _growth(panel: Panel, tau: int) -> np.ndarray:
    sales = panel.values("sales")
    prev = panel.shifted_rows(tau)
    out = np.full(len(panel), np.nan)
    ok = prev >= 0
    base = np.where(ok, sales[np.where(ok, prev, 0)], np.nan)
    ok &= ~np.isnan(sales) & ~np.isnan(base) & (base > 0)
    out[ok] = (sales[ok] / base[ok] - 1.0) * 100.0
    return out


def _delta(panel: Panel, tau: int) -> np.ndarray:
    opmar = panel.values("opmar")
    prev = panel.shifted_rows(tau)
    ok = prev >= 0
    base = np.where(ok, opmar[np.where(ok, prev, 0)], np.nan)
    return opmar - base


def _check_tau(tau: int) -> None:
    if not 1 <= tau <= MAX_LAG:
        raise DomainError(f"tau must be in [1, {MAX_LAG}], got {tau}")


def derive_growth(panel: Panel, tau: int) -> Panel:
    _check_tau(tau)
    return panel.with_columns({VariableKey(VariableBase.salesGR, tau).name: _growth(panel, tau)})


def derive_opmar_delta(panel: Panel, tau: int) -> Panel:
    _check_tau(tau)
    return panel.with_columns({VariableKey(VariableBase.opmarDelta, tau).name: _delta(panel, tau)})


def deflate(panel: Panel, cpi: Mapping[int, float], base_index: float) -> Panel:
    years = np.unique(panel.years)
    missing = [int(y) for y in years if int(y) not in cpi]
    if missing:
        raise MissingYearsError(missing)
    factor = np.array([base_index / cpi[int(y)] for y in panel.years], dtype=float)
    columns = {}
    for base in DOLLAR_BASES:
        if panel.has_column(base.value):
            columns[base.value] = panel.values(base.value) * factor
    return panel.with_columns(columns, deflated=True)


def load_cpi(path: Union[str, Path]) -> Dict[int, float]:
    """Annual CPI from `year,index` rows; monthly rows are averaged per year."""
    frame = pd.read_csv(path)
    if not {"year", "index"} <= set(frame.columns):
        raise ParseError("CPI file needs 'year' and 'index' columns", column="year")
    annual = frame.groupby("year")["index"].mean()
    return {int(y): float(v) for y, v in annual.items()}


def _parse_numeric(raw: pd.Series, column: str) -> np.ndarray:
    text = raw.astype(str).str.strip()
    empty = text == ""
    parsed = pd.to_numeric(text.where(~empty), errors="coerce").to_numpy(dtype=float)
    bad = ~empty.to_numpy() & ~np.isfinite(parsed)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"malformed numeric cell '{raw.iloc[row]}'", row=row + 1, column=column)
    return parsed


def ingest_csv(
    path: Union[str, Path],
    schema: Optional[Mapping[str, Union[str, VariableKey]]] = None,
    start_year: int = DEFAULT_START_YEAR,
    end_year: int = DEFAULT_END_YEAR,
    cpi: Optional[Mapping[int, float]] = None,
    base_index: Optional[float] = None,
) -> Panel:
    """Read a firm-year CSV. `schema` maps CSV headers to variable names; known names map to themselves."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    for required in ("firm_id", "year"):
        if required not in raw.columns:
            raise ParseError(f"missing required column '{required}'", column=required)

    mapping = {}
    for col in raw.columns:
        if col in ("firm_id", "year"):
            continue
        target = (schema or {}).get(col, col)
        if target == "sic":
            mapping[col] = "sic"
            continue
        try:
            mapping[col] = VariableKey.parse(target).name
        except DomainError:
            logger.debug("ignoring column %s", col)

    frame = pd.DataFrame({"firm_id": raw["firm_id"].str.strip()})
    if (frame["firm_id"] == "").any():
        row = int(np.flatnonzero((frame["firm_id"] == "").to_numpy())[0])
        raise ParseError("empty firm_id", row=row + 1, column="firm_id")
    years = _parse_numeric(raw["year"], "year")
    if np.isnan(years).any() or (years != np.round(years)).any():
        row = int(np.flatnonzero(np.isnan(years) | (years != np.round(years)))[0])
        raise ParseError("year must be an integer", row=row + 1, column="year")
    frame["year"] = years.astype(int)
    for col, name in mapping.items():
        frame[name] = _parse_numeric(raw[col], col)

    if "sales" in frame:
        neg = np.flatnonzero(frame["sales"].to_numpy() < 0)
        if neg.size:
            raise ParseError("sales must be non-negative", row=int(neg[0]) + 1, column="sales")
    for col in frame.columns:
        if col.startswith("salesGR_"):
            low = np.flatnonzero(frame[col].to_numpy() < -100)
            if low.size:
                raise ParseError("sales growth below -100%", row=int(low[0]) + 1, column=col)

    dup = frame.duplicated(["firm_id", "year"], keep="first")
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise IntegrityError(f"duplicate firm-year ({frame['firm_id'].iloc[row]}, {frame['year'].iloc[row]}) at row {row + 1}")

    outside = (frame["year"] < start_year) | (frame["year"] > end_year)
    if outside.any():
        logger.warning("dropping %d rows outside [%d, %d]", int(outside.sum()), start_year, end_year)
        frame = frame.loc[~outside]

    panel = Panel(frame, start_year, end_year, source=str(path))
    logger.info("ingested %s from %s", panel, path)
    if cpi is not None:
        panel = deflate(panel, cpi, base_index if base_index is not None else 100.0)
    return panel


def cagr(start_value: float, end_value: float, years: int) -> float:
    if start_value <= 0:
        raise DomainError(f"start value must be positive, got {start_value}")
    if end_value < 0:
        raise DomainError(f"end value must be non-negative, got {end_value}")
    if years < 1:
        raise DomainError(f"years must be >= 1, got {years}")
    if end_value == 0:
        return -100.0
    return ((end_value / start_value) ** (1.0 / years) - 1.0) * 100.0


def growth_to_cagr(growth: np.ndarray, years: int) -> np.ndarray:
    """Cumulative growth in percent to compound annual growth in percent."""
    growth = np.asarray(growth, dtype=float)
    if years == 1:
        return growth.copy()
    gross = np.clip(1.0 + growth / 100.0, 0.0, None)
    return (gross ** (1.0 / years) - 1.0) * 100.0


def _trimmed(sample: Sequence[float], alpha: float) -> np.ndarray:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    values = np.sort(np.asarray(sample, dtype=float))
    n = values.size
    if n == 0:
        raise DomainError("sample is empty")
    k = math.floor(alpha * n + 1e-9)
    kept = values[k:n - k]
    if kept.size == 0:
        raise DomainError(f"trimming {k} from each tail leaves no observations")
    return kept


def trimmed_mean(sample: Sequence[float], alpha: float) -> float:
    return float(np.mean(_trimmed(sample, alpha)))


def trimmed_std(sample: Sequence[float], alpha: float) -> float:
    kept = _trimmed(sample, alpha)
    if kept.size < 2:
        raise DomainError("standard deviation needs two observations after trimming")
    return float(np.std(kept, ddof=1))
