"""Text, CSV and PDF renderings of forecasts, assessments and backtest rankings."""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from fpdf import FPDF

from errors import ConfigError, DataError
from forecast import REPORT_QUANTILES, DistributionalForecast, EstimateAssessment, base_rates

logger = logging.getLogger(__name__)

FORMATS = ("text", "csv", "pdf")
Section = Tuple[str, List[Tuple[str, str]]]


def _fmt(value, digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    if isinstance(value, (float, np.floating)):
        return f"{value:.{digits}f}"
    return str(value)


def forecast_sections(forecast: DistributionalForecast, levels: Sequence[float] = REPORT_QUANTILES) -> List[Section]:
    header = [
        ("case", str(forecast.case) if forecast.case else "-"),
        ("horizon", str(forecast.horizon)),
        ("class size", str(forecast.n)),
        ("candidates", _fmt(forecast.candidate_count)),
        ("selector", forecast.provenance or "-"),
    ]
    quantiles = [(f"q{level * 100:g}", _fmt(q)) for level, q in zip(levels, forecast.quantiles(levels))]
    table = base_rates(forecast)
    rates = [(label, _fmt(value)) for label, value in table.rows()]
    return [
        ("Forecast", header),
        ("Sales growth quantiles (%)", quantiles),
        (f"Base rates, CAGR over {forecast.horizon} year(s) (%)", rates),
    ]


def forecast_frame(forecast: DistributionalForecast, levels: Sequence[float] = REPORT_QUANTILES) -> pd.DataFrame:
    rows = [("summary", "class_size", forecast.n), ("summary", "candidates", forecast.candidate_count)]
    rows += [("quantile", f"q{level * 100:g}", float(q)) for level, q in zip(levels, forecast.quantiles(levels))]
    rows += [("base_rate", label, value) for label, value in base_rates(forecast).rows()]
    return pd.DataFrame(rows, columns=["section", "label", "value"])


def assessment_sections(assessment: EstimateAssessment) -> List[Section]:
    pits = [(f"estimate {_fmt(e)}%", f"PIT {_fmt(p, 3)}") for e, p in zip(assessment.estimates, assessment.pits)]
    summary = [
        ("coverage", _fmt(assessment.coverage, 4)),
        ("warning", "estimates in the forecast tails" if assessment.warning else "none"),
    ]
    return [("Estimates", pits), ("Assessment", summary)]


def results_sections(frame: pd.DataFrame, top: Optional[int] = None) -> List[Section]:
    if frame.empty:
        return [("Backtest results", [("none", "")])]
    ranked = frame.sort_values("dq", kind="stable", na_position="last")
    if top:
        ranked = ranked.head(top)
    lines = []
    for _, row in ranked.iterrows():
        label = " ".join(
            str(row[c]) for c in ("algorithm", "ref_var", "transform", "n_pc", "combination", "correction")
            if isinstance(row[c], str) and row[c]
        )
        label += f" w={row['w']} size={'-' if pd.isna(row['size']) else row['size']}"
        scores = f"dq={_fmt(row['dq'], 4)} ks={_fmt(row['ks'])} cvm={_fmt(row['cvm'], 3)} m={row['m']} skipped={row['skipped']}"
        lines.append((f"h={row['horizon']} {label}", scores))
    return [("Backtest results by dq", lines)]


def render_text(sections: Iterable[Section]) -> str:
    out = []
    for title, rows in sections:
        out.append(title)
        out.append("-" * len(title))
        width = max((len(k) for k, _ in rows), default=0)
        out.extend(f"{k.ljust(width)}  {v}" for k, v in rows)
        out.append("")
    return "\n".join(out)


def render_pdf(title: str, sections: Iterable[Section], path: Union[str, Path]) -> Path:
    pdf = FPDF()
    pdf.add_page()
    pdf.set_font("Helvetica", "B", 14)
    pdf.cell(0, 10, title, 0, 1)
    for heading, rows in sections:
        pdf.set_font("Helvetica", "B", 11)
        pdf.cell(0, 8, heading, 0, 1)
        pdf.set_font("Helvetica", "", 9)
        for key, value in rows:
            pdf.cell(110, 5, key[:80], 0, 0)
            pdf.cell(0, 5, value[:60], 0, 1)
        pdf.ln(3)
    path = Path(path)
    pdf.output(str(path), "F")
    logger.info("wrote PDF report %s", path)
    return path


def emit(
    sections: List[Section],
    frame: Optional[pd.DataFrame],
    fmt: str,
    out: Optional[Union[str, Path]] = None,
    title: str = "Reference class forecast",
) -> Optional[str]:
    """Write a report in the requested format; text and CSV go to the returned string when out is None."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format '{fmt}', choose from {', '.join(FORMATS)}")
    if fmt == "pdf":
        if out is None:
            raise ConfigError("PDF output needs --out")
        render_pdf(title, sections, out)
        return None
    if fmt == "csv":
        if frame is None:
            raise ConfigError("this report has no CSV form")
        text = frame.to_csv(index=False)
    else:
        text = render_text(sections)
    if out is None:
        return text
    Path(out).write_text(text)
    return None


def load_results(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"results file not found: {path}")
    frame = pd.read_csv(path, keep_default_na=True, dtype={"transform": str, "n_pc": str, "combination": str, "correction": str})
    missing = {"dq", "ks", "cvm", "m", "skipped"} - set(frame.columns)
    if missing:
        raise DataError(f"{path} is not a backtest results file, missing {sorted(missing)}")
    return frame.fillna({c: "" for c in ("transform", "n_pc", "combination", "correction", "ref_var")})
