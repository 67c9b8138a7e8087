"""Synthetic firm panels with a known one-year growth law.

Every reference variable follows a latent AR(1) process. One-year log gross
sales growth given the latent values at t is normal with location and log
scale linear in the latents, so growth itself is a shifted log-normal on
(-100, inf) with a closed-form CDF. A drift in the latent mean moves the
marginal outcome distribution over time while the conditional law stays fixed.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, NamedTuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy.stats import norm

from errors import ConfigError, DataError
from panel_store import CONTEMPORANEOUS, FirmYear, Panel

logger = logging.getLogger(__name__)

SIDECAR_COLUMNS = ["firm_id", "year", "horizon", "loc", "scale"]
SIC_CODES = [1311, 2834, 2911, 3571, 3674, 4911, 5311, 7372]


class VariableProcess(BaseModel):
    name: str
    mean: float = 0.0
    sd: float = 1.0
    persistence: float = Field(0.8, ge=0.0, lt=1.0)
    # reported value is exp(mean + sd * latent)
    skew: bool = False
    # latent mean shift per year
    drift: float = 0.0

    @field_validator("name")
    @classmethod
    def _reported(cls, value):
        if value not in CONTEMPORANEOUS or value == "sales":
            raise ValueError(f"'{value}' is not a generated reference variable")
        return value


def _default_processes() -> List[VariableProcess]:
    return [
        VariableProcess(name="opmar", mean=0.08, sd=0.06),
        VariableProcess(name="at", mean=5.0, sd=1.2, skew=True, persistence=0.95),
        VariableProcess(name="seq", mean=4.0, sd=1.2, skew=True, persistence=0.95),
        VariableProcess(name="beta", mean=1.0, sd=0.4, persistence=0.5),
    ]


class GeneratorSpec(BaseModel):
    firms: int = Field(100, ge=1)
    start_year: int = 1960
    years: int = Field(40, ge=2)
    variables: List[VariableProcess] = Field(default_factory=_default_processes)
    # log gross growth: loc = loc0 + sum(loc_coef * latent), scale = exp(log_scale0 + sum(scale_coef * latent))
    loc0: float = 0.05
    log_scale0: float = math.log(0.2)
    loc_coef: Dict[str, float] = Field(default_factory=dict)
    scale_coef: Dict[str, float] = Field(default_factory=dict)
    initial_sales: float = Field(100.0, gt=0.0)
    missing_rate: float = Field(0.0, ge=0.0, lt=1.0)
    exit_hazard: float = Field(0.0, ge=0.0, lt=1.0)
    # firms enter uniformly over the first entry_span years
    entry_span: int = Field(0, ge=0)
    zero_scale: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def _mechanism_uses_generated_variables(self):
        names = {v.name for v in self.variables}
        if len(names) != len(self.variables):
            raise ValueError("duplicate generated variable")
        unknown = (set(self.loc_coef) | set(self.scale_coef)) - names
        if unknown:
            raise ValueError(f"mechanism refers to variables that are not generated: {sorted(unknown)}")
        return self

    @property
    def end_year(self) -> int:
        return self.start_year + self.years - 1

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GeneratorSpec":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"generator spec not found: {path}")
        try:
            return cls.model_validate_json(path.read_text())
        except ValidationError as e:
            raise ConfigError(f"invalid generator spec {path}: {e}") from e


class Sidecar:
    """True conditional growth law per firm-year: log(1 + Y/100) ~ N(loc, scale^2)."""

    def __init__(self, frame: pd.DataFrame):
        missing = set(SIDECAR_COLUMNS) - set(frame.columns)
        if missing:
            raise DataError(f"sidecar lacks columns {sorted(missing)}")
        frame = frame[SIDECAR_COLUMNS].copy()
        frame["firm_id"] = frame["firm_id"].astype(str)
        self.frame = frame.reset_index(drop=True)
        self._index = pd.MultiIndex.from_frame(self.frame[["firm_id", "year", "horizon"]])

    def __len__(self):
        return len(self.frame)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Sidecar":
        return cls(pd.read_csv(path, dtype={"firm_id": str}))

    def law(self, firm_id: str, year: int, horizon: int = 1):
        pos = self._index.get_indexer([(str(firm_id), int(year), int(horizon))])[0]
        if pos < 0:
            raise DataError(f"no generator law for {firm_id}/{year} at horizon {horizon}")
        row = self.frame.iloc[pos]
        return float(row["loc"]), float(row["scale"])


class SyntheticPanel(NamedTuple):
    panel: Panel
    sidecar: Sidecar


def _conditional_cdf(y: np.ndarray, loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    loc = np.broadcast_to(np.asarray(loc, dtype=float), y.shape)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), y.shape)
    out = np.zeros(y.shape)
    inside = y > -100.0
    z = np.log1p(y[inside] / 100.0) - loc[inside]
    s = scale[inside]
    point = s == 0.0
    cdf = np.where(point, (z >= 0.0).astype(float), 0.0)
    cdf[~point] = norm.cdf(z[~point] / s[~point])
    out[inside] = cdf
    return out


def oracle_pit(sidecar: Sidecar, case: Union[FirmYear, object], realized: float, horizon: int = 1) -> float:
    """The true conditional CDF of the case evaluated at the realised growth."""
    target = getattr(case, "target", case)
    horizon = getattr(case, "horizon", horizon)
    loc, scale = sidecar.law(target.firm_id, target.year, horizon)
    return float(_conditional_cdf(np.array([realized]), np.array([loc]), np.array([scale]))[0])


def oracle_pits(sidecar: Sidecar, panel: Panel, cases) -> np.ndarray:
    """Vectorised oracle PIT for a list of one-year cases."""
    keys = [(c.target.firm_id, c.target.year, c.horizon) for c in cases]
    pos = sidecar._index.get_indexer(keys)
    if (pos < 0).any():
        first = keys[int(np.flatnonzero(pos < 0)[0])]
        raise DataError(f"no generator law for {first[0]}/{first[1]} at horizon {first[2]}")
    realized = np.array([panel.outcome(c.horizon)[panel.row_of(c.target.firm_id, c.target.year)] for c in cases])
    return _conditional_cdf(realized, sidecar.frame["loc"].to_numpy()[pos], sidecar.frame["scale"].to_numpy()[pos])


def generate(spec: GeneratorSpec) -> SyntheticPanel:
    rng = np.random.default_rng(spec.seed)
    n, years = spec.firms, spec.years
    names = [v.name for v in spec.variables]
    firm_ids = np.array([f"F{i:05d}" for i in range(n)])
    sic = rng.choice(SIC_CODES, size=n)
    entry = rng.integers(0, spec.entry_span + 1, size=n) if spec.entry_span else np.zeros(n, dtype=int)
    phi = np.array([v.persistence for v in spec.variables])
    innovation = np.sqrt(1.0 - phi ** 2)
    drift = np.array([v.drift for v in spec.variables])
    loc_coef = np.array([spec.loc_coef.get(name, 0.0) for name in names])
    scale_coef = np.array([spec.scale_coef.get(name, 0.0) for name in names])

    latent = rng.standard_normal((n, len(names)))
    sales = spec.initial_sales * np.exp(rng.standard_normal(n))
    alive = np.ones(n, dtype=bool)
    rows, laws = [], []
    for t in range(years):
        year = spec.start_year + t
        # draws happen for every firm every year so that a seed fixes the whole panel
        shocks = rng.standard_normal((n, len(names)))
        growth_z = rng.standard_normal(n)
        exits = rng.random(n) < spec.exit_hazard
        missing = rng.random((n, len(names) + 1)) < spec.missing_rate
        if t > 0:
            latent = phi * latent + innovation * shocks
        shifted = latent + drift * t
        present = alive & (entry <= t)

        loc = spec.loc0 + shifted @ loc_coef
        scale = np.zeros(n) if spec.zero_scale else np.exp(spec.log_scale0 + shifted @ scale_coef)
        for i in np.flatnonzero(present):
            values = {"firm_id": firm_ids[i], "year": year, "sic": float(sic[i]), "sales": sales[i]}
            for j, proc in enumerate(spec.variables):
                raw = proc.mean + proc.sd * shifted[i, j]
                values[proc.name] = math.exp(raw) if proc.skew else raw
            for j, name in enumerate(["sales"] + names):
                if missing[i, j]:
                    values[name] = np.nan
            rows.append(values)

        last_year = t == years - 1
        leaving = present & exits
        alive &= ~leaving
        if not last_year:
            staying = present & ~leaving
            for i in np.flatnonzero(staying):
                laws.append((firm_ids[i], year, 1, float(loc[i]), float(scale[i])))
        sales = np.where(present, sales * np.exp(loc + scale * growth_z), sales)

    frame = pd.DataFrame(rows, columns=["firm_id", "year", "sic", "sales"] + names)
    panel = Panel(frame, spec.start_year, spec.end_year, source=f"synthetic(seed={spec.seed})")
    sidecar = Sidecar(pd.DataFrame(laws, columns=SIDECAR_COLUMNS))
    logger.info("generated %s with %d known laws", panel, len(sidecar))
    return SyntheticPanel(panel, sidecar)


def write(result: SyntheticPanel, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"panel": out / "panel.csv", "sidecar": out / "sidecar.csv"}
    result.panel.export_csv(paths["panel"], lags=())
    result.sidecar.frame.to_csv(paths["sidecar"], index=False, float_format="%.17g")
    logger.info("wrote %s and %s", paths["panel"], paths["sidecar"])
    return paths
