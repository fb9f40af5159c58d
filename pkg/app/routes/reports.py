from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError
from typing import Dict, List, Optional
import logging

from errors import MixtureError
from services import metrics
from services.metrics import RunReport
from services.reporting import format_overhead, render_table

logger = logging.getLogger(__name__)
router = APIRouter()


class QualifiedRequest(BaseModel):
    baseline: float
    score: float
    scale: float = 1.0


class OverheadRequest(BaseModel):
    num_qualified: Optional[int] = None
    num_models: int = 1
    qualified_per_model: Optional[List[int]] = None


class ReportRequest(BaseModel):
    method: str
    baselines: Dict[str, float]
    scores: Dict[str, float]
    groups: Optional[Dict[str, List[str]]] = None


class TableRequest(BaseModel):
    reports: List[RunReport] = Field(min_length=1)
    baseline: Optional[RunReport] = None


@router.post("/qualified")
async def qualified(request: QualifiedRequest):
    """99%ルールの判定"""
    try:
        return {"qualified": metrics.qualified(request.baseline, request.score, request.scale)}
    except MixtureError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/overhead")
async def overhead(request: OverheadRequest):
    """オーバーヘッド（合格0ならnull / "-"）"""
    try:
        if request.qualified_per_model is not None:
            value = metrics.overhead_multi_model(request.qualified_per_model)
        elif request.num_qualified is not None:
            value = metrics.overhead(request.num_qualified, request.num_models)
        else:
            raise HTTPException(status_code=400, detail="num_qualified or qualified_per_model is required")
    except MixtureError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"overhead": value, "display": format_overhead(value)}


@router.post("/report")
async def build_report(request: ReportRequest):
    """スコアからRunReportとMarkdown表を作る"""
    try:
        report = metrics.build_report(request.method, request.baselines, request.scores, request.groups)
        baseline = metrics.single_task_report({t: request.baselines[t] for t in request.scores})
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=e.errors()[0]["msg"])
    except MixtureError as e:
        logger.error(f"Error building report: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))
    return {"report": report.model_dump(mode="json"), "table": render_table([report], baseline)}


@router.post("/table")
async def table(request: TableRequest):
    try:
        return {"markdown": render_table(request.reports, request.baseline)}
    except MixtureError as e:
        raise HTTPException(status_code=400, detail=str(e))
