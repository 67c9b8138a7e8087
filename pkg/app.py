import logging
import os
from typing import Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from config import PRESETS, ForecastConfig, preset
from errors import ConfigError, RefClassError
from forecast import REPORT_QUANTILES, assess_estimates, base_rates, forecast_case
from panel_store import Panel, ingest_csv

logger = logging.getLogger(__name__)

app = FastAPI(title="refclass")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.state.panel = None


class ForecastRequest(BaseModel):
    firm_id: str
    year: int
    horizon: int = Field(1, ge=1)
    preset: Optional[str] = None
    config: Optional[ForecastConfig] = None
    quantiles: List[float] = list(REPORT_QUANTILES)


class AssessRequest(ForecastRequest):
    estimates: List[float]


def load_panel(path: str) -> Panel:
    panel = ingest_csv(path)
    app.state.panel = panel
    return panel


def _panel() -> Panel:
    if app.state.panel is None:
        path = os.environ.get("REFCLASS_PANEL")
        if not path:
            raise HTTPException(status_code=503, detail="no panel loaded; set REFCLASS_PANEL")
        load_panel(path)
    return app.state.panel


def _config(request: ForecastRequest) -> ForecastConfig:
    if request.config is not None:
        return request.config
    if request.preset is not None:
        return preset(request.preset)
    raise ConfigError("either preset or config is required")


def _forecast(request: ForecastRequest):
    return forecast_case(_panel(), request.firm_id, request.year, request.horizon, _config(request))


@app.get("/presets")
async def list_presets() -> Dict[str, dict]:
    return {name: cfg.model_dump(mode="json") for name, cfg in PRESETS.items()}


@app.post("/forecast")
def forecast_endpoint(request: ForecastRequest):
    try:
        forecast = _forecast(request)
        return {
            "case": str(forecast.case),
            "horizon": forecast.horizon,
            "class_size": forecast.n,
            "candidates": forecast.candidate_count,
            "selector": forecast.provenance,
            "quantiles": {f"{q:g}": float(v) for q, v in zip(request.quantiles, forecast.quantiles(request.quantiles))},
            "point_estimates": forecast.point_estimates(),
            "outcomes": forecast.outcomes.tolist(),
        }
    except HTTPException:
        raise
    except RefClassError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.exception("forecast failed")
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/assess")
def assess_endpoint(request: AssessRequest):
    try:
        assessment = assess_estimates(_forecast(request), request.estimates)
        return {
            "pits": assessment.pits.tolist(),
            "coverage": assessment.coverage,
            "warning": assessment.warning,
        }
    except HTTPException:
        raise
    except RefClassError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.exception("assessment failed")
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/base_rates")
def base_rates_endpoint(request: ForecastRequest):
    try:
        table = base_rates(_forecast(request))
        return {"horizon": table.horizon, "n": table.n, "rows": [{"label": k, "value": v} for k, v in table.rows()]}
    except HTTPException:
        raise
    except RefClassError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.exception("base rates failed")
        raise HTTPException(status_code=500, detail=str(e))


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
