from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError
from typing import Dict, List, Optional
import logging

from errors import MixtureError
from services.curriculum import build_two_stage_plan, classify_resources, describe_plan, DEFAULT_THRESHOLD
from services.samplers import MixtureStream, StrategyConfig, weights_for

logger = logging.getLogger(__name__)
router = APIRouter()

MAX_STREAM_LENGTH = 100_000


class StrategyRequest(BaseModel):
    kind: str
    tau: Optional[float] = None
    cap: Optional[int] = None

    def build(self) -> StrategyConfig:
        try:
            return StrategyConfig(kind=self.kind, tau=self.tau, cap=self.cap)
        except ValidationError as e:
            raise HTTPException(status_code=400, detail=e.errors()[0]["msg"])
        except MixtureError as e:
            raise HTTPException(status_code=400, detail=str(e))


class WeightsRequest(BaseModel):
    sizes: Dict[str, int]
    strategy: StrategyRequest


class StreamRequest(WeightsRequest):
    seed: int = 0
    length: int = Field(default=1000, ge=1, le=MAX_STREAM_LENGTH)


class PlanRequest(BaseModel):
    saturation: Dict[str, float]
    sizes: Dict[str, int]
    threshold: float = DEFAULT_THRESHOLD
    cap: int = 20000
    tau: float = 2.0
    stage1_epochs: float = 1.0
    stage2_epochs: float = 10.0
    batch_size: int = 32
    step_cap: Optional[int] = None


@router.post("/weights")
async def mixture_weights(request: WeightsRequest):
    """サイズと戦略からミクスチャ重みを計算"""
    strategy = request.strategy.build()
    try:
        weights = weights_for(strategy, request.sizes)
        return {"strategy": strategy.describe(), "weights": weights.as_dict()}
    except MixtureError as e:
        logger.error(f"Error computing weights: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/stream")
async def mixture_stream(request: StreamRequest):
    """シード固定でタスク列を抽選し、タスクごとの件数を返す"""
    strategy = request.strategy.build()
    try:
        weights = weights_for(strategy, request.sizes)
        draws = MixtureStream(weights, request.sizes, request.seed).draw(request.length)
    except MixtureError as e:
        logger.error(f"Error sampling stream: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))

    counts: Dict[str, int] = {task_id: 0 for task_id in weights.task_ids}
    for task_id, _ in draws:
        counts[task_id] += 1
    return {
        "rng": MixtureStream.rng_name,
        "length": request.length,
        "counts": counts,
        "weights": weights.as_dict(),
    }


@router.post("/plan")
async def two_stage_plan(request: PlanRequest):
    """飽和エポックから2段階プランを作り、ステップ数まで解決する"""
    try:
        classification = classify_resources(request.saturation, request.threshold, request.sizes)
        plan = build_two_stage_plan(
            classification,
            stage1_epochs=request.stage1_epochs,
            stage2_epochs=request.stage2_epochs,
            cap=request.cap,
            tau=request.tau,
            step_cap=request.step_cap,
        )
        stages: List[Dict] = describe_plan(plan, request.sizes, request.batch_size)
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=e.errors()[0]["msg"])
    except MixtureError as e:
        logger.error(f"Error building plan: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))

    return {
        "high_resource": classification.high_resource(),
        "low_resource": classification.low_resource(),
        "stages": stages,
    }
