"""Candidate sets and reference-class selectors."""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import (
    DomainError,
    InsufficientCandidatesError,
    MissingValueError,
    UndersizedClassError,
)
from panel_store import FirmYear, Panel, VariableKey, parse_variables
from pca_engine import CandidateRotation, PcCountRule, Transform, TrimStats, rotate_candidates
from stats_core import Ecdf, empirical_quantile, empirical_quantiles, insertion_ranks_sorted

logger = logging.getLogger(__name__)

MIN_CLASS_SIZE = 20
INTERSECTION_CAP = 0.25


class Algorithm(str, Enum):
    market_climate = "market_climate"
    group_major = "group_major"
    group_industry = "group_industry"
    mc_deciles = "mc_deciles"
    rank_deviation = "rank_deviation"
    pca_rank_deviation = "pca_rank_deviation"


class Combination(str, Enum):
    lard = "lard"
    union = "union"
    intersection = "intersection"


class Availability(str, Enum):
    all_variables = "all_variables"
    per_variable = "per_variable"


class SelectorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    algorithm: Algorithm = Algorithm.rank_deviation
    size: float = Field(0.05, gt=0.0, lt=1.0)
    combination: Combination = Combination.lard
    correction: bool = False
    transform: Transform = Transform.ranks
    pc_rule: str = "2"
    min_size: int = Field(MIN_CLASS_SIZE, ge=1)
    trim_stats: TrimStats = TrimStats.trimmed

    @field_validator("pc_rule", mode="before")
    @classmethod
    def _check_rule(cls, value):
        return PcCountRule.parse(value).label

    @model_validator(mode="before")
    @classmethod
    def _lard_has_no_correction(cls, data):
        if isinstance(data, dict) and data.get("combination", Combination.lard) == Combination.lard:
            data = {**data, "correction": False}
        return data

    @property
    def rule(self) -> PcCountRule:
        return PcCountRule.parse(self.pc_rule)

    @property
    def uses_size(self) -> bool:
        return self.algorithm in (Algorithm.rank_deviation, Algorithm.pca_rank_deviation)

    @property
    def availability(self) -> Availability:
        if self.algorithm is Algorithm.market_climate:
            return Availability.per_variable
        if self.algorithm is Algorithm.rank_deviation and self.combination is Combination.union:
            return Availability.per_variable
        return Availability.all_variables

    def label(self) -> str:
        parts = [self.algorithm.value]
        if self.algorithm is Algorithm.pca_rank_deviation:
            parts += [self.transform.value, self.pc_rule]
        if self.uses_size:
            parts.append(self.combination.value)
            if self.combination is not Combination.lard:
                parts.append("cor" if self.correction else "nocor")
            parts.append(f"c={self.size:g}")
        return "/".join(parts)


@dataclass(frozen=True)
class ForecastCase:
    target: FirmYear
    horizon: int
    variables: Tuple[VariableKey, ...]
    window: int

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(parse_variables(self.variables)))
        if not self.variables:
            raise DomainError("a forecast case needs at least one reference variable")
        if self.horizon < 1 or self.window < 1:
            raise DomainError(f"horizon and window must be >= 1, got h={self.horizon}, w={self.window}")

    @property
    def candidate_years(self) -> Tuple[int, int]:
        t, h, w = self.target.year, self.horizon, self.window
        return t - h - w + 1, t - h


@dataclass(frozen=True)
class CandidateSet:
    firm_ids: np.ndarray
    firm_codes: np.ndarray
    years: np.ndarray
    values: np.ndarray  # N x kappa, NaN where not observed
    outcomes: np.ndarray
    sic: np.ndarray
    sales: np.ndarray
    variables: Tuple[str, ...]

    @property
    def n(self) -> int:
        return int(self.outcomes.size)

    @property
    def kappa(self) -> int:
        return int(self.values.shape[1])

    @property
    def available(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def members(self) -> list:
        return [FirmYear(str(f), int(y)) for f, y in zip(self.firm_ids, self.years)]

    def subset(self, rows: np.ndarray) -> "CandidateSet":
        return CandidateSet(
            firm_ids=self.firm_ids[rows],
            firm_codes=self.firm_codes[rows],
            years=self.years[rows],
            values=self.values[rows],
            outcomes=self.outcomes[rows],
            sic=self.sic[rows],
            sales=self.sales[rows],
            variables=self.variables,
        )

    @cached_property
    def column_stats(self) -> list:
        """Per variable: observed rows, candidate midranks and sorted observed values."""
        from scipy.stats import rankdata

        stats = []
        for j in range(self.kappa):
            col = self.values[:, j]
            rows = np.flatnonzero(~np.isnan(col))
            observed = col[rows]
            stats.append((rows, rankdata(observed, method="average"), np.sort(observed)))
        return stats

    @cached_property
    def tie_order(self) -> np.ndarray:
        """Candidate positions ordered by ascending (year, firm_id)."""
        return np.lexsort((self.firm_codes, self.years))


@dataclass(frozen=True)
class ReferenceClass:
    firm_ids: np.ndarray
    years: np.ndarray
    outcomes: np.ndarray
    provenance: str
    candidate_count: int
    n_components: Optional[int] = None
    rows: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.outcomes.size == 0:
            raise UndersizedClassError("empty reference class")

    def __len__(self):
        return int(self.outcomes.size)

    @property
    def members(self) -> list:
        return [FirmYear(str(f), int(y)) for f, y in zip(self.firm_ids, self.years)]


@dataclass(frozen=True)
class Target:
    key: FirmYear
    values: np.ndarray
    sic: Optional[float] = None
    sales: Optional[float] = None


def build_candidates(panel: Panel, case: ForecastCase, availability: Availability = Availability.all_variables) -> CandidateSet:
    first, last = case.candidate_years
    if first < panel.start_year or last > panel.end_year:
        raise InsufficientCandidatesError(
            f"candidate window [{first}, {last}] for {case.target} is outside panel years [{panel.start_year}, {panel.end_year}]"
        )
    years = panel.years
    mask = (years >= first) & (years <= last)
    outcomes = panel.outcome(case.horizon)
    mask &= ~np.isnan(outcomes)
    values = np.column_stack([panel.values(v) for v in case.variables])
    observed = ~np.isnan(values)
    if Availability(availability) is Availability.all_variables:
        mask &= observed.all(axis=1)
    else:
        mask &= observed.any(axis=1)
    rows = np.flatnonzero(mask)
    if rows.size < MIN_CLASS_SIZE:
        raise InsufficientCandidatesError(f"{rows.size} candidates for {case.target} (h={case.horizon}, w={case.window})")
    sales = panel.values("sales") if panel.has_column("sales") else np.full(len(panel), np.nan)
    sic = panel.values("sic") if panel.has_column("sic") else np.full(len(panel), np.nan)
    return CandidateSet(
        firm_ids=panel.firm_ids[rows],
        firm_codes=panel.firm_codes[rows],
        years=years[rows],
        values=values[rows],
        outcomes=outcomes[rows],
        sic=sic[rows],
        sales=sales[rows],
        variables=tuple(v.name for v in case.variables),
    )


def target_of(panel: Panel, case: ForecastCase) -> Target:
    row = panel.row_of(case.target.firm_id, case.target.year)
    if row is None:
        raise MissingValueError(f"no observation for {case.target}")
    values = np.array([panel.values(v)[row] for v in case.variables], dtype=float)
    sic = panel.values("sic")[row] if panel.has_column("sic") else np.nan
    sales = panel.values("sales")[row] if panel.has_column("sales") else np.nan
    return Target(case.target, values, None if np.isnan(sic) else float(sic), None if np.isnan(sales) else float(sales))


def class_size(c: float, n: int, min_size: int = MIN_CLASS_SIZE) -> int:
    if n < min_size:
        raise UndersizedClassError(f"{n} candidates cannot form a class of {min_size}")
    return min(n, max(math.ceil(c * n - 1e-9), min_size))


def _make_class(cands: CandidateSet, rows: np.ndarray, provenance: str, min_size: int, n_components: Optional[int] = None) -> ReferenceClass:
    rows = np.unique(rows)
    if rows.size < min_size:
        raise UndersizedClassError(f"{provenance}: {rows.size} members, need {min_size}")
    return ReferenceClass(
        firm_ids=cands.firm_ids[rows],
        years=cands.years[rows],
        outcomes=cands.outcomes[rows],
        provenance=provenance,
        candidate_count=cands.n,
        n_components=n_components,
        rows=rows,
    )


def select_market_climate(cands: CandidateSet, min_size: int = MIN_CLASS_SIZE) -> ReferenceClass:
    return _make_class(cands, np.arange(cands.n), "market_climate", min_size)


def select_group(cands: CandidateSet, target_sic: Optional[float], digits: int, min_size: int = MIN_CLASS_SIZE) -> ReferenceClass:
    if digits not in (2, 3):
        raise DomainError(f"SIC group digits must be 2 or 3, got {digits}")
    if target_sic is None or np.isnan(target_sic):
        raise MissingValueError("target SIC code is missing")
    divisor = 10 ** (4 - digits)
    prefix = math.floor(target_sic / divisor)
    with np.errstate(invalid="ignore"):
        rows = np.flatnonzero(np.floor(cands.sic / divisor) == prefix)
    return _make_class(cands, rows, f"group_{digits}digit", min_size)


def select_mc(cands: CandidateSet, target_sales: Optional[float], min_size: int = MIN_CLASS_SIZE) -> ReferenceClass:
    if target_sales is None or np.isnan(target_sales):
        raise MissingValueError("target sales are missing")
    sales = cands.sales
    if np.isnan(sales).any():
        raise DomainError("candidate sales must be observed for the decile approach")
    ecdf = Ecdf.from_sample(sales)
    top = empirical_quantile(ecdf, 0.99)
    if target_sales > top:
        logger.debug("target sales %.4g above the 99th percentile %.4g of %d candidates", target_sales, top, cands.n)
        return _make_class(cands, np.flatnonzero(sales > top), "mc_top_percentile", min_size)
    bounds = empirical_quantiles(ecdf.sorted_sample, [k / 10 for k in range(1, 10)])
    decile = int(np.searchsorted(bounds, target_sales, side="left"))
    member_deciles = np.searchsorted(bounds, sales, side="left")
    return _make_class(cands, np.flatnonzero(member_deciles == decile), f"mc_decile_{decile + 1}", min_size)


def _union_rank_distance(rank_among: np.ndarray, observed: np.ndarray, sorted_observed: np.ndarray, x: float) -> np.ndarray:
    """|R(x_j) - R(x)| with ranks taken over the candidates plus the target."""
    target_rank = insertion_ranks_sorted(sorted_observed, np.array([x]))[0]
    union_rank = rank_among + (observed > x) + 0.5 * (observed == x)
    return np.abs(union_rank - target_rank)


def _nearest(cands: CandidateSet, rows: np.ndarray, distance: np.ndarray, k: int) -> np.ndarray:
    """k rows with the smallest distance; ties at the cutoff go to ascending (year, firm_id)."""
    order = np.lexsort((cands.firm_codes[rows], cands.years[rows], distance))
    return rows[order[:k]]


def _single_variable(cands: CandidateSet, j: int, x: float, c: float, min_size: int) -> np.ndarray:
    rows, rank_among, sorted_observed = cands.column_stats[j]
    k = class_size(c, rows.size, min_size)
    distance = _union_rank_distance(rank_among, cands.values[rows, j], sorted_observed, x)
    return _nearest(cands, rows, distance, k)


def _complete(cands: CandidateSet) -> CandidateSet:
    complete = cands.available.all(axis=1)
    return cands if complete.all() else cands.subset(np.flatnonzero(complete))


def select_rank_deviation(
    cands: CandidateSet,
    target_values: Sequence[float],
    config: SelectorConfig,
    n_components: Optional[int] = None,
) -> ReferenceClass:
    x = np.asarray(target_values, dtype=float)
    if x.shape != (cands.kappa,):
        raise DomainError(f"target has {x.size} values for {cands.kappa} reference variables")
    if np.isnan(x).any():
        raise MissingValueError("target reference variables must all be observed")
    kappa, c, floor = cands.kappa, config.size, config.min_size
    provenance = config.label()

    if config.combination is Combination.union:
        size = c / kappa if config.correction else c
        chosen = [_single_variable(cands, j, x[j], size, floor) for j in range(kappa)]
        return _make_class(cands, np.concatenate(chosen), provenance, floor, n_components)

    full = _complete(cands)
    if full.n < floor:
        raise UndersizedClassError(f"{full.n} candidates observe every reference variable")

    if config.combination is Combination.intersection:
        size = min(c * kappa, INTERSECTION_CAP) if config.correction else c
        chosen = None
        for j in range(kappa):
            rows = set(_single_variable(full, j, x[j], size, floor).tolist())
            chosen = rows if chosen is None else chosen & rows
        return _make_class(full, np.fromiter(sorted(chosen), dtype=np.int64), provenance, floor, n_components)

    distance = np.zeros(full.n)
    for j in range(kappa):
        rows, rank_among, sorted_observed = full.column_stats[j]
        distance[rows] += _union_rank_distance(rank_among, full.values[rows, j], sorted_observed, x[j])
    k = class_size(c, full.n, floor)
    return _make_class(full, _nearest(full, np.arange(full.n), distance, k), provenance, floor, n_components)


def rotate(cands: CandidateSet, config: SelectorConfig) -> CandidateRotation:
    if not cands.available.all():
        raise MissingValueError("PCA rank deviation needs every reference variable on every candidate")
    return rotate_candidates(cands.values, config.transform, config.rule, config.trim_stats)


def select_pca_rank_deviation(
    cands: CandidateSet,
    target_values: Sequence[float],
    config: SelectorConfig,
    rotation: Optional[CandidateRotation] = None,
) -> ReferenceClass:
    x = np.asarray(target_values, dtype=float)
    if np.isnan(x).any():
        raise MissingValueError("target reference variables must all be observed")
    rotation = rotation or rotate(cands, config)
    n_pc = rotation.model.n_components
    rotated = replace(cands, values=rotation.scores, variables=tuple(f"PC{i + 1}" for i in range(n_pc)))
    return select_rank_deviation(rotated, rotation.target_scores(x), config, n_components=n_pc)


def select_reference_class(
    cands: CandidateSet,
    target: Target,
    config: SelectorConfig,
    rotation: Optional[CandidateRotation] = None,
) -> ReferenceClass:
    algorithm = config.algorithm
    if algorithm is Algorithm.market_climate:
        return select_market_climate(cands, config.min_size)
    if algorithm is Algorithm.group_major:
        return select_group(cands, target.sic, 2, config.min_size)
    if algorithm is Algorithm.group_industry:
        return select_group(cands, target.sic, 3, config.min_size)
    if algorithm is Algorithm.mc_deciles:
        return select_mc(cands, target.sales, config.min_size)
    if algorithm is Algorithm.rank_deviation:
        return select_rank_deviation(cands, target.values, config)
    return select_pca_rank_deviation(cands, target.values, config, rotation)
