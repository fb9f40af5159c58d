import logging
import math
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import InvalidParameter, UnknownTask
from services.samplers import StrategyConfig, StrategyKind

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 5.0


class ResourceClass(str, Enum):
    HIGH = "high"
    LOW = "low"


class TaskResource(BaseModel):
    model_config = ConfigDict(frozen=True)

    saturation_epochs: float = Field(ge=0)
    resource: ResourceClass


class ResourceClassification(BaseModel):
    """単一タスク学習の飽和エポックから決めた高/低リソース区分"""

    model_config = ConfigDict(frozen=True)

    threshold: float = Field(default=DEFAULT_THRESHOLD, gt=0)
    tasks: Dict[str, TaskResource]

    @model_validator(mode="after")
    def _check_rule(self) -> "ResourceClassification":
        for task_id, entry in self.tasks.items():
            expected = ResourceClass.LOW if entry.saturation_epochs < self.threshold else ResourceClass.HIGH
            if entry.resource != expected:
                raise ValueError(f"{task_id} should be {expected.value}-resource")
        return self

    @property
    def task_ids(self) -> List[str]:
        return list(self.tasks)

    def high_resource(self) -> List[str]:
        return [t for t, e in self.tasks.items() if e.resource == ResourceClass.HIGH]

    def low_resource(self) -> List[str]:
        return [t for t, e in self.tasks.items() if e.resource == ResourceClass.LOW]


class Stage(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    task_ids: Tuple[str, ...] = Field(min_length=1)
    strategy: StrategyConfig
    epochs: float = Field(gt=0)
    max_steps: Optional[int] = Field(default=None, ge=0)


class CurriculumPlan(BaseModel):
    """順序付きの学習ステージ"""

    model_config = ConfigDict(frozen=True)

    stages: Tuple[Stage, ...] = Field(min_length=1)
    step_cap: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_nesting(self) -> "CurriculumPlan":
        for earlier, later in zip(self.stages, self.stages[1:]):
            if not set(earlier.task_ids) <= set(later.task_ids):
                raise ValueError(f"stage {earlier.name} tasks must be a subset of stage {later.name}")
        return self

    @property
    def task_ids(self) -> List[str]:
        return list(self.stages[-1].task_ids)


def classify_resources(
    saturation: Mapping[str, float],
    threshold: float = DEFAULT_THRESHOLD,
    task_ids: Optional[Iterable[str]] = None,
) -> ResourceClassification:
    """飽和エポックが閾値未満なら低リソース"""
    if threshold is None or not math.isfinite(threshold) or threshold <= 0:
        raise InvalidParameter("threshold", threshold, "must be > 0")
    if task_ids is not None:
        for task_id in task_ids:
            if task_id not in saturation:
                raise UnknownTask(task_id)

    tasks = {}
    for task_id, epochs in saturation.items():
        if epochs is None or epochs < 0:
            raise InvalidParameter(f"saturation[{task_id}]", epochs, "must be >= 0")
        resource = ResourceClass.LOW if epochs < threshold else ResourceClass.HIGH
        tasks[task_id] = TaskResource(saturation_epochs=float(epochs), resource=resource)
    return ResourceClassification(threshold=threshold, tasks=tasks)


def build_single_stage_plan(
    task_ids: Sequence[str],
    strategy: StrategyConfig,
    epochs: float,
    step_cap: Optional[int] = None,
) -> CurriculumPlan:
    stage = Stage(name="mixture", task_ids=tuple(task_ids), strategy=strategy, epochs=epochs)
    return CurriculumPlan(stages=(stage,), step_cap=step_cap)


def build_two_stage_plan(
    classification: ResourceClassification,
    stage1_epochs: float = 1.0,
    stage2_epochs: float = 10.0,
    cap: int = 20000,
    tau: float = 2.0,
    step_cap: Optional[int] = None,
) -> CurriculumPlan:
    """高リソースタスク→全タスクの2段階プラン"""
    stages = []
    high = classification.high_resource()
    if high:
        stages.append(Stage(
            name="high_resource",
            task_ids=tuple(high),
            strategy=StrategyConfig(kind=StrategyKind.INSTANCE_BALANCED),
            epochs=stage1_epochs,
        ))
    else:
        logger.info("No high-resource tasks; plan has the mixture stage only")

    stages.append(Stage(
        name="mixture",
        task_ids=tuple(classification.task_ids),
        strategy=StrategyConfig(kind=StrategyKind.CAPPED_TEMPERATURE_SCALED, cap=cap, tau=tau),
        epochs=stage2_epochs,
    ))
    return CurriculumPlan(stages=tuple(stages), step_cap=step_cap)


def effective_size(stage: Stage, sizes: Mapping[str, int]) -> int:
    """ステップ換算用のデータ量（cap付きはΣmin(n,K)）"""
    missing = [t for t in stage.task_ids if t not in sizes]
    if missing:
        raise UnknownTask(missing[0])
    if stage.strategy.kind == StrategyKind.CAPPED_TEMPERATURE_SCALED:
        return sum(min(sizes[t], stage.strategy.cap) for t in stage.task_ids)
    return sum(sizes[t] for t in stage.task_ids)


def _apportion(weights: Sequence[int], total: int) -> List[int]:
    """totalを比例配分（最大剰余法、同点は前のステージ優先）"""
    weight_sum = sum(weights)
    if weight_sum == 0:
        return [0] * len(weights)
    exact = [w * total / weight_sum for w in weights]
    shares = [math.floor(x) for x in exact]
    remainder = total - sum(shares)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - shares[i]), i))
    for i in order[:remainder]:
        shares[i] += 1
    return shares


def resolve_steps(plan: CurriculumPlan, sizes: Mapping[str, int], batch_size: int) -> List[int]:
    """各ステージのステップ数"""
    if batch_size < 1:
        raise InvalidParameter("batch_size", batch_size, "must be >= 1")

    steps = []
    for stage in plan.stages:
        n = math.ceil(stage.epochs * effective_size(stage, sizes) / batch_size)
        if stage.max_steps is not None:
            n = min(n, stage.max_steps)
        steps.append(n)

    total = sum(steps)
    if plan.step_cap is not None and total > plan.step_cap:
        logger.warning(f"Plan needs {total} steps; truncating to step cap {plan.step_cap}")
        steps = _apportion(steps, plan.step_cap)
    return steps


def fit_to_budget(
    plan: CurriculumPlan,
    sizes: Mapping[str, int],
    batch_size: int,
    budget: int,
) -> CurriculumPlan:
    """ステージ比率を保ったまま合計ステップ数をbudgetにそろえる"""
    if budget < len(plan.stages):
        raise InvalidParameter("budget", budget, f"must be >= number of stages ({len(plan.stages)})")

    natural = resolve_steps(plan.model_copy(update={"step_cap": None}), sizes, batch_size)
    shares = _apportion(natural, budget)
    # 各ステージ最低1ステップ
    for i, share in enumerate(shares):
        if share == 0:
            donor = max(range(len(shares)), key=lambda j: shares[j])
            shares[donor] -= 1
            shares[i] = 1

    stages = []
    for stage, share in zip(plan.stages, shares):
        epochs = share * batch_size / effective_size(stage, sizes)
        stages.append(stage.model_copy(update={"epochs": epochs, "max_steps": share}))
    return CurriculumPlan(stages=tuple(stages), step_cap=budget)


def measure_saturation(curve: Sequence[Tuple[float, float]]) -> float:
    """devメトリクスが最大になるエポック（同点は早い方）"""
    if not curve:
        raise InvalidParameter("curve", curve, "must not be empty")
    best_epoch, best_metric = None, None
    previous = None
    for epoch, metric in curve:
        if previous is not None and epoch <= previous:
            raise InvalidParameter("curve", epoch, "epochs must be strictly increasing")
        previous = epoch
        if best_metric is None or metric > best_metric:
            best_epoch, best_metric = epoch, metric
    return float(best_epoch)


def describe_plan(plan: CurriculumPlan, sizes: Mapping[str, int], batch_size: int) -> List[Dict]:
    """レポート用に解決済みプランを辞書化"""
    steps = resolve_steps(plan, sizes, batch_size)
    return [
        {
            "name": stage.name,
            "task_ids": list(stage.task_ids),
            "strategy": stage.strategy.model_dump(mode="json"),
            "epochs": stage.epochs,
            "steps": n,
        }
        for stage, n in zip(plan.stages, steps)
    ]
