import numpy as np
import pandas as pd

from panel_store import Panel
from selection import CandidateSet
from synthgen import GeneratorSpec, VariableProcess


def make_candidates(values, years=None, outcomes=None, sic=None, sales=None, variables=None) -> CandidateSet:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    firm_ids = np.array([f"F{i:04d}" for i in range(n)], dtype=object)
    return CandidateSet(
        firm_ids=firm_ids,
        firm_codes=np.arange(n),
        years=np.full(n, 2000) if years is None else np.asarray(years),
        values=values,
        outcomes=np.arange(n, dtype=float) if outcomes is None else np.asarray(outcomes, dtype=float),
        sic=np.full(n, np.nan) if sic is None else np.asarray(sic, dtype=float),
        sales=np.full(n, np.nan) if sales is None else np.asarray(sales, dtype=float),
        variables=tuple(variables or [f"x{j}" for j in range(values.shape[1])]),
    )


def panel_from_rows(rows, start_year=1990, end_year=2010) -> Panel:
    return Panel(pd.DataFrame(rows), start_year, end_year)


def synthetic_spec(**overrides) -> GeneratorSpec:
    """Small panel whose growth location depends on opmar only."""
    base = dict(
        firms=60,
        start_year=1980,
        years=30,
        variables=[
            VariableProcess(name="opmar", mean=0.08, sd=0.06, persistence=0.7, drift=0.02),
            VariableProcess(name="at", mean=5.0, sd=1.0, skew=True),
            VariableProcess(name="seq", mean=4.0, sd=1.0, skew=True),
            VariableProcess(name="beta", mean=1.0, sd=0.3, persistence=0.5),
        ],
        loc_coef={"opmar": 0.3},
        log_scale0=float(np.log(0.15)),
        seed=11,
    )
    base.update(overrides)
    return GeneratorSpec(**base)


def growing_panel(firms=30, start_year=1990, end_year=2010) -> Panel:
    """Firm i grows sales by i percent a year; opmar drifts upward by 0.1 a year."""
    rows = []
    for i in range(firms):
        for year in range(start_year, end_year + 1):
            rows.append({
                "firm_id": f"F{i:02d}",
                "year": year,
                "sic": 2800 + i,
                "sales": 100.0 * (1 + 0.01 * i) ** (year - start_year),
                "opmar": i + 0.1 * (year - start_year),
            })
    return panel_from_rows(rows, start_year, end_year)
