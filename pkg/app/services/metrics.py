import logging
import math
import statistics
from typing import Dict, List, Mapping, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import InvalidParameter, MixedScales, NoTasks, UnknownTask

logger = logging.getLogger(__name__)

QUALIFIED_RATIO = 0.99


class TaskResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str
    single_task_baseline: float
    multi_task_score: float
    qualified: bool
    group: Optional[str] = None


class RunReport(BaseModel):
    """1手法ぶんの結果（タスク別スコア・合格数・オーバーヘッド）"""

    method: str
    seed: Optional[int] = None
    tasks: List[TaskResult] = Field(min_length=1)
    macro_avg: float
    num_qualified: int
    num_models: int = Field(ge=1)
    overhead: Optional[float] = None
    qualified_per_model: List[int] = Field(default_factory=list)
    groups: Dict[str, List[str]] = Field(default_factory=dict)
    plan: List[Dict] = Field(default_factory=list)
    settings: Dict = Field(default_factory=dict)
    metadata: Dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_accounting(self) -> "RunReport":
        for task in self.tasks:
            if task.qualified != qualified(task.single_task_baseline, task.multi_task_score):
                raise ValueError(f"qualified flag of {task.task_id} disagrees with the 99% rule")
        if self.num_qualified != sum(task.qualified for task in self.tasks):
            raise ValueError("num_qualified does not match the task flags")
        if (self.overhead is None) != (self.num_qualified == 0):
            raise ValueError("overhead must be undefined exactly when no task qualifies")
        return self

    def task(self, task_id: str) -> TaskResult:
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise UnknownTask(task_id)

    def scores(self) -> Dict[str, float]:
        return {task.task_id: task.multi_task_score for task in self.tasks}


def qualified(baseline: float, score: float, scale: float = 1.0) -> bool:
    """score ≥ 0.99·baseline（イプシロンなし）"""
    for value in (baseline, score):
        if value is None or not math.isfinite(value) or not 0.0 <= value <= scale:
            raise MixedScales(baseline, score, scale)
    return score >= QUALIFIED_RATIO * baseline


def overhead(num_qualified: int, num_models: int = 1) -> Optional[float]:
    """モデル数 / 合格タスク数（単一モデルなら1/合格数、単一タスク方式は1）。合格0ならNone"""
    if num_models < 1:
        raise InvalidParameter("num_models", num_models, "must be >= 1")
    if num_qualified < 0:
        raise InvalidParameter("num_qualified", num_qualified, "must be >= 0")
    if num_qualified == 0:
        return None
    return num_models / num_qualified


def overhead_multi_model(qualified_per_model: Sequence[int]) -> Optional[float]:
    """1 / モデルあたり最大合格数"""
    if not qualified_per_model:
        raise InvalidParameter("qualified_per_model", list(qualified_per_model), "must not be empty")
    best = max(qualified_per_model)
    if best == 0:
        return None
    return 1.0 / best


def macro_average(scores: Mapping[str, float]) -> float:
    """タスク間の単純平均"""
    if not scores:
        raise NoTasks("scores")
    return math.fsum(scores.values()) / len(scores)


def build_report(
    method: str,
    baselines: Mapping[str, float],
    scores: Mapping[str, float],
    groups: Optional[Mapping[str, Sequence[str]]] = None,
    **extra,
) -> RunReport:
    """ベースラインとマルチタスクスコアからRunReportを組み立てる"""
    missing = [t for t in scores if t not in baselines]
    if missing:
        raise UnknownTask(missing[0])
    groups = {name: list(members) for name, members in (groups or {"all": list(scores)}).items()}
    group_of = {task_id: name for name, members in groups.items() for task_id in members}

    tasks = [
        TaskResult(
            task_id=task_id,
            single_task_baseline=baselines[task_id],
            multi_task_score=score,
            qualified=qualified(baselines[task_id], score),
            group=group_of.get(task_id),
        )
        for task_id, score in scores.items()
    ]
    num_qualified = sum(task.qualified for task in tasks)
    per_model = [sum(1 for t in tasks if t.group == name and t.qualified) for name in groups]

    if len(groups) > 1:
        cost = overhead_multi_model(per_model)
    else:
        cost = overhead(num_qualified, 1)

    report = RunReport(
        method=method,
        tasks=tasks,
        macro_avg=macro_average(scores),
        num_qualified=num_qualified,
        num_models=len(groups),
        overhead=cost,
        qualified_per_model=per_model,
        groups=groups,
        **extra,
    )
    logger.info(f"{method}: macro={report.macro_avg:.4f}, qualified={num_qualified}/{len(tasks)}, models={len(groups)}")
    return report


def single_task_report(baselines: Mapping[str, float], **extra) -> RunReport:
    """単一タスク方式の行（全タスク合格・オーバーヘッド1）"""
    report = build_report("single_task", baselines, baselines, **extra)
    n = len(baselines)
    return report.model_copy(update={"num_models": n, "overhead": overhead(report.num_qualified, n)})


class AggregateReport(BaseModel):
    method: str
    seeds: List[int]
    macro_avg_mean: float
    macro_avg_std: float
    num_qualified_mean: float
    num_qualified_std: float
    task_score_mean: Dict[str, float]
    task_score_std: Dict[str, float]


def _std(values: Sequence[float]) -> float:
    return statistics.pstdev(values) if len(values) > 1 else 0.0


def aggregate(reports: Sequence[RunReport]) -> AggregateReport:
    """複数シードの平均と標準偏差"""
    if not reports:
        raise InvalidParameter("reports", [], "must not be empty")
    task_ids = [task.task_id for task in reports[0].tasks]
    per_task = {t: [r.task(t).multi_task_score for r in reports] for t in task_ids}
    macros = [r.macro_avg for r in reports]
    counts = [float(r.num_qualified) for r in reports]
    return AggregateReport(
        method=reports[0].method,
        seeds=[r.seed for r in reports if r.seed is not None],
        macro_avg_mean=statistics.fmean(macros),
        macro_avg_std=_std(macros),
        num_qualified_mean=statistics.fmean(counts),
        num_qualified_std=_std(counts),
        task_score_mean={t: statistics.fmean(v) for t, v in per_task.items()},
        task_score_std={t: _std(v) for t, v in per_task.items()},
    )
