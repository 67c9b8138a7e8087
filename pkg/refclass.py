"""Command line: python refclass.py <subcommand> ...

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from backtest import ResultStore, brute_force, forward_selection, results_frame, run_backtest
from config import PRESETS, BacktestConfig, ForecastConfig, preset
from errors import ConfigError, DataError, DomainError, RefClassError, SelectionError
from forecast import REPORT_QUANTILES, assess_estimates, forecast_case, historic_track, track_frame
from panel_store import DEFAULT_END_YEAR, DEFAULT_START_YEAR, MAX_LAG, Panel, ingest_csv, load_cpi
from pca_engine import Transform
from report import assessment_sections, emit, forecast_frame, forecast_sections, load_results, results_sections
from selection import Algorithm, Combination, SelectorConfig

logger = logging.getLogger("refclass")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class UsageError(RefClassError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _levels(text: str) -> List[float]:
    try:
        levels = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid quantile levels '{text}'")
    levels = [v / 100.0 if v > 1.0 else v for v in levels]
    if not levels or any(not 0.0 < v <= 1.0 for v in levels):
        raise argparse.ArgumentTypeError("quantile levels must lie in (0, 1] or (0, 100]")
    return levels


def _names(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _load_panel(args) -> Panel:
    cpi = load_cpi(args.cpi) if getattr(args, "cpi", None) else None
    return ingest_csv(args.panel, start_year=args.start_year, end_year=args.end_year, cpi=cpi, base_index=getattr(args, "base_index", None))


def _forecast_config(args) -> ForecastConfig:
    if args.preset:
        return preset(args.preset)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            return ForecastConfig.model_validate_json(path.read_text())
        except ValidationError as e:
            raise ConfigError(f"invalid forecast config {path}: {e}") from e
    try:
        selector = SelectorConfig(
            algorithm=args.algorithm,
            size=args.size,
            combination=args.combination,
            correction=args.correction,
            transform=args.transform,
            pc_rule=args.pc_rule,
            min_size=args.min_size,
        )
        return ForecastConfig(selector=selector, window=args.window, variables=_names(args.variables))
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _emit(text: Optional[str]) -> None:
    if text is not None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_ingest(args) -> int:
    schema = None
    if args.schema:
        try:
            schema = json.loads(Path(args.schema).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read schema {args.schema}: {e}") from e
    cpi = load_cpi(args.cpi) if args.cpi else None
    panel = ingest_csv(args.csv, schema, args.start_year, args.end_year, cpi, args.base_index)
    panel.export_csv(args.out, lags=())
    return 0


def cmd_derive(args) -> int:
    panel = _load_panel(args)
    panel.export_csv(args.out, lags=range(1, args.max_lag + 1))
    return 0


def cmd_forecast(args) -> int:
    panel = _load_panel(args)
    forecast = forecast_case(panel, args.firm, args.year, args.horizon, _forecast_config(args))
    levels = args.quantiles or REPORT_QUANTILES
    _emit(emit(forecast_sections(forecast, levels), forecast_frame(forecast, levels), args.format, args.out))
    if args.outcomes:
        pd.DataFrame({"growth_pct": forecast.outcomes}).to_csv(args.outcomes, index=False)
    return 0


def cmd_assess(args) -> int:
    panel = _load_panel(args)
    path = Path(args.estimates)
    if not path.exists():
        raise DataError(f"estimates file not found: {path}")
    estimates = pd.read_csv(path, dtype={"firm_id": str})
    missing = {"firm_id", "year", "horizon", "estimate_pct"} - set(estimates.columns)
    if missing:
        raise DataError(f"estimates file lacks columns {sorted(missing)}")
    config = _forecast_config(args)
    sections, frames = [], []
    for (firm, year, horizon), group in estimates.groupby(["firm_id", "year", "horizon"], sort=True):
        forecast = forecast_case(panel, firm, int(year), int(horizon), config)
        assessment = assess_estimates(forecast, group["estimate_pct"], args.low, args.high)
        for title, rows in assessment_sections(assessment):
            sections.append((f"{title} {firm}/{year} h={horizon}", rows))
        frame = assessment.to_frame()
        frame.insert(0, "horizon", int(horizon))
        frame.insert(0, "year", int(year))
        frame.insert(0, "firm_id", firm)
        frame["coverage"] = assessment.coverage
        frame["warning"] = assessment.warning
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    _emit(emit(sections, table, args.format, args.out, title="Estimate assessment"))
    return 0


def cmd_track(args) -> int:
    panel = _load_panel(args)
    records = historic_track(panel, args.firm, range(args.first, args.last + 1), args.horizon, _forecast_config(args))
    frame = track_frame(records)
    if args.format == "csv":
        _emit(emit([], frame, "csv", args.out))
        return 0
    rows = [(str(r.year), r.skipped or " ".join(f"{q:.2f}" for q in r.quantiles) + f" | realized {r.realized}") for r in records]
    _emit(emit([(f"Track of {args.firm} (q10 q25 q50 q75 q90)", rows)], frame, args.format, args.out, title="Historic track"))
    return 0


def _backtest_config(args) -> BacktestConfig:
    config = BacktestConfig.load(args.config)
    updates = {}
    if getattr(args, "panel", None):
        updates["panel"] = args.panel
    if getattr(args, "output", None):
        updates["output"] = args.output
    if getattr(args, "workers", None):
        updates["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    config = config.model_copy(update=updates)
    if not config.panel:
        raise ConfigError("backtest config names no panel; pass --panel")
    return config


def _config_panel(config: BacktestConfig) -> Panel:
    cpi = load_cpi(config.cpi) if config.cpi else None
    return ingest_csv(config.panel, start_year=config.start_year, end_year=config.end_year, cpi=cpi, base_index=config.base_index)


def _record_config(config: BacktestConfig) -> None:
    output = Path(config.output)
    path = output.with_name(f"{output.stem}.config.json")
    config.dump(path)
    logger.info("effective configuration written to %s", path)


def _search_store(config: BacktestConfig, restart: bool) -> Optional[ResultStore]:
    if not config.checkpoint:
        return None
    output = Path(config.output)
    return ResultStore(output.with_name(f"{output.stem}.runs.csv"), resume=not restart)


def cmd_backtest(args) -> int:
    config = _backtest_config(args)
    panel = _config_panel(config)
    _record_config(config)
    store = ResultStore(config.output, resume=config.checkpoint and not args.restart)
    results = run_backtest(panel, config, store)
    logger.info("%d configurations evaluated, results in %s", len(results), config.output)
    return 0


def cmd_search(args) -> int:
    config = _backtest_config(args)
    panel = _config_panel(config)
    _record_config(config)
    store = _search_store(config, args.restart)
    if args.mode == "forward":
        pool = _names(args.pool) if args.pool else [v for vs in config.variable_sets for v in vs]
        report = forward_selection(panel, args.horizon, list(dict.fromkeys(pool)), config, store=store)
        rows = []
        for stage in report.stages:
            for variables, result in stage.best:
                rows.append(dict(stage=stage.index, **result.row()))
        frame = pd.DataFrame(rows)
    else:
        variables = _names(args.variables) if args.variables else list(config.variable_sets[0])
        lags = [int(k) for k in _names(args.lags)] if args.lags else []
        results = brute_force(panel, args.horizon, variables, config, lags=lags, cap=args.cap, store=store)
        frame = results_frame(results)
    frame.to_csv(config.output, index=False)
    logger.info("search results written to %s", config.output)
    return 0


def cmd_synth(args) -> int:
    from synthgen import GeneratorSpec, generate, write

    spec = GeneratorSpec.load(args.spec) if args.spec else GeneratorSpec()
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    write(generate(spec), args.out)
    return 0


def cmd_report(args) -> int:
    frame = load_results(args.results)
    title = "Backtest ranking"
    _emit(emit(results_sections(frame, args.top), frame, args.format, args.out, title=title))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    import app as service

    if args.panel:
        service.app.state.panel = _load_panel(args)
    uvicorn.run(service.app, host=args.host, port=args.port)
    return 0


def _panel_args(p, required: bool = True) -> None:
    p.add_argument("--panel", required=required, help="firm-year panel CSV")
    p.add_argument("--cpi", help="CPI file (year,index) to deflate dollar variables")
    p.add_argument("--base-index", type=float, default=None)
    p.add_argument("--start-year", type=int, default=DEFAULT_START_YEAR)
    p.add_argument("--end-year", type=int, default=DEFAULT_END_YEAR)


def _selector_args(p) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="ForecastConfig JSON file")
    p.add_argument("--algorithm", default=Algorithm.rank_deviation.value, choices=[a.value for a in Algorithm])
    p.add_argument("--size", type=float, default=0.05)
    p.add_argument("--combination", default=Combination.lard.value, choices=[c.value for c in Combination])
    p.add_argument("--correction", action="store_true")
    p.add_argument("--transform", default=Transform.ranks.value, choices=[t.value for t in Transform])
    p.add_argument("--pc-rule", default="2")
    p.add_argument("--min-size", type=int, default=20)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--variables", default="sales", help="comma-separated reference variables")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="refclass", description="Reference class forecasts of sales growth")
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--seed", type=int, default=None)
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("ingest", help="validate a raw CSV and write a clean panel")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", help="JSON mapping of CSV headers to variable names")
    p.add_argument("--cpi")
    p.add_argument("--base-index", type=float, default=None)
    p.add_argument("--start-year", type=int, default=DEFAULT_START_YEAR)
    p.add_argument("--end-year", type=int, default=DEFAULT_END_YEAR)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("derive", help="add lagged growth and margin changes to a panel")
    _panel_args(p)
    p.add_argument("--max-lag", type=int, default=MAX_LAG, choices=range(1, MAX_LAG + 1))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("forecast", help="distributional forecast for one firm-year")
    _panel_args(p)
    _selector_args(p)
    p.add_argument("--firm", required=True)
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--quantiles", type=_levels)
    p.add_argument("--format", default="text", choices=["text", "csv", "pdf"])
    p.add_argument("--out")
    p.add_argument("--outcomes", help="write the sorted class outcomes to this CSV")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("assess", help="PIT and coverage of analyst estimates")
    _panel_args(p)
    _selector_args(p)
    p.add_argument("--estimates", required=True)
    p.add_argument("--low", type=float, default=0.05)
    p.add_argument("--high", type=float, default=0.95)
    p.add_argument("--format", default="text", choices=["text", "csv", "pdf"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("track", help="forecast quantiles against realised growth over years")
    _panel_args(p)
    _selector_args(p)
    p.add_argument("--firm", required=True)
    p.add_argument("--from", dest="first", type=int, required=True)
    p.add_argument("--to", dest="last", type=int, required=True)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--format", default="text", choices=["text", "csv", "pdf"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("backtest", help="score a configuration grid")
    p.add_argument("--config", required=True)
    p.add_argument("--panel")
    p.add_argument("--output")
    p.add_argument("--workers", type=int)
    p.add_argument("--restart", action="store_true", help="ignore an existing results file")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("search", help="forward selection or brute force over variable sets")
    p.add_argument("mode", choices=["forward", "brute"])
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--panel")
    p.add_argument("--output")
    p.add_argument("--workers", type=int)
    p.add_argument("--pool", help="comma-separated candidate variables for forward selection")
    p.add_argument("--variables", help="comma-separated variables for brute force")
    p.add_argument("--lags", help="comma-separated lag depths added to the balance-sheet and full variable sets")
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--restart", action="store_true", help="ignore configurations finished by an earlier run")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("synth", help="generate a synthetic panel and its true growth laws")
    p.add_argument("--spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="render backtest results")
    p.add_argument("--results", required=True)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--format", default="text", choices=["text", "pdf"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    _panel_args(p, required=False)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"refclass: {e}\n")
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DomainError) as e:
        sys.stderr.write(f"refclass: {e}\n")
        return 1
    except (DataError, SelectionError) as e:
        sys.stderr.write(f"refclass: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
