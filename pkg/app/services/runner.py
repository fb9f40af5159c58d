"""
実験の実行（単一タスクベースライン・マルチタスク学習・手法比較）。

個々の学習は逐次だが、独立した学習（タスク別ベースライン、グループ別モデル）は
asyncio.to_thread でワーカー数まで並列に走らせる。
"""

import asyncio
import hashlib
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError

from config import ExperimentConfig, Method, LLM_HYPERPARAMETERS
from errors import MalformedRecord, MissingFile, StaleBaselines, UnknownTask
from services.curriculum import (
    CurriculumPlan,
    Stage,
    build_single_stage_plan,
    build_two_stage_plan,
    classify_resources,
    describe_plan,
    fit_to_budget,
    measure_saturation,
)
from services.metrics import RunReport, build_report
from services.registry import Registry, load_tasks
from services.samplers import RNG_NAME, StrategyConfig, StrategyKind
from services.synth import generate
from services.taxonomy import partition
from services.trainer import LearningCurves, TrainerConfig, train
from utils.file_handler import write_text_atomic

logger = logging.getLogger(__name__)


class BaselineResult(BaseModel):
    metric: float
    saturation_epochs: float
    curve: List[Tuple[float, float]]


class BaselineFile(BaseModel):
    """baselines.jsonの中身（fingerprintは作成時の設定）"""

    fingerprint: Optional[str] = None
    baselines: Dict[str, BaselineResult]


def baseline_fingerprint(config: ExperimentConfig, seed: int) -> str:
    """ベースラインの結果を左右する設定（データ・学習器・エポック数・シード）のハッシュ"""
    if config.manifest is not None:
        manifest = Path(config.manifest)
        content = hashlib.sha256(manifest.read_bytes()).hexdigest() if manifest.is_file() else None
        source: Dict[str, Any] = {"manifest": str(manifest), "sha256": content}
    else:
        source = {"synth": config.synth.model_dump(mode="json")}
    payload = {
        "source": source,
        "trainer": config.trainer.model_dump(mode="json", exclude={"seed"}),
        "baseline_epochs": config.baseline_epochs,
        "seed": seed,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def save_baselines(
    path: Union[str, Path],
    baselines: Mapping[str, BaselineResult],
    fingerprint: Optional[str] = None,
) -> Path:
    content = BaselineFile(fingerprint=fingerprint, baselines=dict(baselines))
    return write_text_atomic(path, content.model_dump_json(indent=2) + "\n")


def load_baselines(path: Union[str, Path], fingerprint: Optional[str] = None) -> Dict[str, BaselineResult]:
    """save_baselinesで書いたファイルを読み込む（fingerprint指定時は一致を確認）"""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        content = BaselineFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise MalformedRecord(path, 1, str(e.errors()[0]["msg"])) from None
    if fingerprint is not None and content.fingerprint != fingerprint:
        raise StaleBaselines(path, fingerprint, content.fingerprint)
    return content.baselines


def report_metadata(
    config: ExperimentConfig,
    baselines: Mapping[str, BaselineResult],
    task_ids: Sequence[str],
) -> Dict[str, Any]:
    """report.jsonのmetadata（単一タスク・マルチタスク共通）"""
    return {
        "created_at": datetime.now(timezone.utc).isoformat(),
        "rng": RNG_NAME,
        "saturation_rule": "dev_argmax",
        "saturation": {t: baselines[t].saturation_epochs for t in task_ids},
        "llm_hyperparameters": LLM_HYPERPARAMETERS[config.profile],
    }


def load_registry(config: ExperimentConfig) -> Registry:
    """設定のデータソースからレジストリを作る（合成データは書き出してから読み込む）"""
    if config.manifest is not None:
        return load_tasks(config.manifest)
    manifest = generate(config.synth.suite(), Path(config.output_dir) / "data")
    return load_tasks(manifest)


async def _run_limited(semaphore: asyncio.Semaphore, func, *args):
    async with semaphore:
        return await asyncio.to_thread(func, *args)


def _train_baseline(
    task_id: str,
    registry: Registry,
    epochs: int,
    trainer: TrainerConfig,
) -> BaselineResult:
    n_train = registry.dataset(task_id).n_train
    steps_per_epoch = math.ceil(n_train / trainer.batch_size)
    # 評価がエポック境界にそろうよう、総ステップを epochs × steps_per_epoch に固定
    total = epochs * steps_per_epoch
    stage = Stage(
        name="mixture",
        task_ids=(task_id,),
        strategy=StrategyConfig(kind=StrategyKind.INSTANCE_BALANCED),
        epochs=total * trainer.batch_size / n_train,
        max_steps=total,
    )
    config = trainer.model_copy(update={"eval_every": steps_per_epoch})
    _, curves = train(CurriculumPlan(stages=(stage,)), registry.subset([task_id]), config)

    curve = [(float(step // steps_per_epoch), metric) for step, metric in curves.series(task_id)]
    saturation = measure_saturation(curve)
    # 早期終了と同じ扱い: ピーク時のdev値をベースラインとする
    best = max(metric for _, metric in curve)
    logger.info(f"Baseline {task_id}: dev={best:.4f}, saturation={saturation:g} epoch(s)")
    return BaselineResult(metric=best, saturation_epochs=saturation, curve=curve)


async def run_single_task_baselines(
    config: ExperimentConfig,
    registry: Registry,
    seed: Optional[int] = None,
) -> Dict[str, BaselineResult]:
    """タスクごとに単独で学習し、ベースラインと飽和エポックを返す"""
    trainer = config.trainer.model_copy(update={"seed": config.seeds[0] if seed is None else seed})
    semaphore = asyncio.Semaphore(config.worker_count())
    results = await asyncio.gather(*(
        _run_limited(semaphore, _train_baseline, task_id, registry, config.baseline_epochs, trainer)
        for task_id in registry.task_ids
    ))
    return dict(zip(registry.task_ids, results))


def build_plan(
    config: ExperimentConfig,
    method: Method,
    task_ids: Sequence[str],
    baselines: Mapping[str, BaselineResult],
    sizes: Mapping[str, int],
) -> CurriculumPlan:
    """手法に応じたプラン（equal_budgetなら合計ステップをstep_capにそろえる）"""
    if method == Method.TWO_STAGE:
        classification = classify_resources(
            {t: baselines[t].saturation_epochs for t in task_ids},
            config.threshold,
            task_ids,
        )
        plan = build_two_stage_plan(
            classification,
            stage1_epochs=config.stage1_epochs,
            stage2_epochs=config.stage2_epochs,
            cap=config.effective_cap,
            tau=config.effective_tau,
            step_cap=config.step_cap,
        )
    else:
        plan = build_single_stage_plan(task_ids, config.strategy(method), config.epochs, config.step_cap)

    if config.equal_budget and config.step_cap is not None:
        plan = fit_to_budget(plan, sizes, config.trainer.batch_size, config.step_cap)
    return plan


def _train_group(
    config: ExperimentConfig,
    method: Method,
    group: str,
    task_ids: Sequence[str],
    registry: Registry,
    baselines: Mapping[str, BaselineResult],
    trainer: TrainerConfig,
) -> Tuple[Dict[str, float], LearningCurves, List[Dict]]:
    # グループの並びはtask_id順なので、学習はレジストリ順に戻す
    members = set(task_ids)
    task_ids = [t for t in registry.task_ids if t in members]
    sub = registry.subset(task_ids)
    sizes = sub.sizes()
    plan = build_plan(config, method, task_ids, baselines, sizes)
    described = [{"group": group, **stage} for stage in describe_plan(plan, sizes, trainer.batch_size)]
    logger.info(f"Group {group} ({method.value}): {[(s['name'], s['steps']) for s in described]}")

    _, curves = train(plan, sub, trainer)
    scores = {task_id: curves.final(task_id) for task_id in task_ids}
    return scores, curves, described


def _settings(config: ExperimentConfig, method: Method) -> Dict:
    settings = {
        "taxonomy": config.taxonomy.value,
        "step_cap": config.step_cap,
        "step_cap_scope": "total",
        "equal_budget": config.equal_budget,
        "trainer": config.trainer.model_dump(mode="json", exclude={"seed"}),
    }
    if method == Method.TWO_STAGE:
        settings.update({
            "threshold": config.threshold,
            "stage1_epochs": config.stage1_epochs,
            "stage2_epochs": config.stage2_epochs,
            "cap": config.effective_cap,
            "tau": config.effective_tau,
        })
    else:
        settings.update({"epochs": config.epochs, "strategy": config.strategy(method).model_dump(mode="json")})
    return settings


async def run_multi_task(
    config: ExperimentConfig,
    baselines: Mapping[str, BaselineResult],
    registry: Registry,
    seed: Optional[int] = None,
    method: Optional[Method] = None,
) -> Tuple[RunReport, LearningCurves]:
    """タクソノミーで分割し、グループごとに学習してRunReportを作る"""
    method = Method(method or config.method)
    seed = config.seeds[0] if seed is None else seed
    missing = [t for t in registry.task_ids if t not in baselines]
    if missing:
        raise UnknownTask(missing[0])

    groups = partition(registry.specs(), config.taxonomy)
    trainer = config.trainer.model_copy(update={"seed": seed})
    semaphore = asyncio.Semaphore(config.worker_count())
    outputs = await asyncio.gather(*(
        _run_limited(semaphore, _train_group, config, method, name, members, registry, baselines, trainer)
        for name, members in groups.groups
    ))

    scores: Dict[str, float] = {}
    curves = LearningCurves()
    plan: List[Dict] = []
    for group_scores, group_curves, described in outputs:
        scores.update(group_scores)
        curves.points.extend(group_curves.points)
        plan.extend(described)
    # レジストリ順に並べる
    scores = {t: scores[t] for t in registry.task_ids}

    report = build_report(
        method.value,
        {t: baselines[t].metric for t in registry.task_ids},
        scores,
        groups=groups.as_dict(),
        seed=seed,
        plan=plan,
        settings=_settings(config, method),
        metadata=report_metadata(config, baselines, registry.task_ids),
    )
    return report, curves


async def compare(
    config: ExperimentConfig,
    methods: Sequence[Method],
    registry: Registry,
    seed: Optional[int] = None,
) -> Tuple[Dict[str, BaselineResult], Dict[str, Tuple[RunReport, LearningCurves]]]:
    """同じベースライン・同じステップ予算で複数手法を比較"""
    baselines = await run_single_task_baselines(config, registry, seed)
    results = {}
    for method in methods:
        results[Method(method).value] = await run_multi_task(config, baselines, registry, seed, method)
    return baselines, results
