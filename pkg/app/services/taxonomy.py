import logging
from enum import Enum
from typing import Callable, Dict, Iterable, List, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from errors import TaxonomyNotApplicable, UnknownTask
from services.registry import InputArity, LabelScheme, Modality, TaskSpec

logger = logging.getLogger(__name__)


class TaxonomyRule(str, Enum):
    MODALITY_SPLIT = "modality_split"
    SS = "SS"
    BM = "BM"
    BOM = "BOM"
    NONE = "none"

    @property
    def needs_classification(self) -> bool:
        return self in (TaxonomyRule.SS, TaxonomyRule.BM, TaxonomyRule.BOM)


# ルールごとのグループ名（この順で並べる）
GROUP_ORDER: Dict[TaxonomyRule, Tuple[str, ...]] = {
    TaxonomyRule.MODALITY_SPLIT: ("classification", "generation"),
    TaxonomyRule.SS: ("single", "pair"),
    TaxonomyRule.BM: ("binary", "multi"),
    TaxonomyRule.BOM: ("binary", "ordinal", "multiclass"),
    TaxonomyRule.NONE: ("all",),
}


def _modality_group(spec: TaskSpec) -> str:
    return "classification" if spec.modality == Modality.CLASSIFICATION else "generation"


def _ss_group(spec: TaskSpec) -> str:
    return "single" if spec.input_arity == InputArity.SINGLE_SENTENCE else "pair"


def _bm_group(spec: TaskSpec) -> str:
    return "binary" if spec.label_scheme == LabelScheme.BINARY else "multi"


def _bom_group(spec: TaskSpec) -> str:
    return spec.label_scheme.value


_ASSIGN: Dict[TaxonomyRule, Callable[[TaskSpec], str]] = {
    TaxonomyRule.MODALITY_SPLIT: _modality_group,
    TaxonomyRule.SS: _ss_group,
    TaxonomyRule.BM: _bm_group,
    TaxonomyRule.BOM: _bom_group,
    TaxonomyRule.NONE: lambda spec: "all",
}


class TaskPartition(BaseModel):
    """互いに素なタスクグループ"""

    model_config = ConfigDict(frozen=True)

    groups: Tuple[Tuple[str, Tuple[str, ...]], ...]

    @model_validator(mode="after")
    def _check_groups(self) -> "TaskPartition":
        seen = set()
        for name, members in self.groups:
            if not members:
                raise ValueError(f"group {name} is empty")
            overlap = seen & set(members)
            if overlap:
                raise ValueError(f"task(s) {sorted(overlap)} appear in more than one group")
            seen.update(members)
        return self

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.groups]

    def members(self, name: str) -> Tuple[str, ...]:
        for group, members in self.groups:
            if group == name:
                return members
        raise KeyError(name)

    def task_ids(self) -> List[str]:
        return [task_id for _, members in self.groups for task_id in members]

    def as_dict(self) -> Dict[str, List[str]]:
        return {name: list(members) for name, members in self.groups}


def partition(tasks: Iterable[TaskSpec], rule: TaxonomyRule) -> TaskPartition:
    """タクソノミーに従ってタスクを分割"""
    rule = TaxonomyRule(rule)
    tasks = list(tasks)
    assign = _ASSIGN[rule]

    buckets: Dict[str, List[str]] = {name: [] for name in GROUP_ORDER[rule]}
    for spec in tasks:
        if rule.needs_classification and spec.modality != Modality.CLASSIFICATION:
            raise TaxonomyNotApplicable(rule.value, spec.task_id)
        buckets[assign(spec)].append(spec.task_id)

    # グループ内はtask_id順（入力順に依存しない）
    groups = tuple(
        (name, tuple(sorted(members)))
        for name, members in buckets.items()
        if members
    )
    logger.info(f"Partitioned {len(tasks)} task(s) by {rule.value}: {dict(groups)}")
    return TaskPartition(groups=groups)


def compose(
    base: TaskPartition,
    tasks: Iterable[TaskSpec],
    rule: TaxonomyRule,
    group: str,
) -> TaskPartition:
    """既存パーティションの1グループをさらに分割する"""
    by_id = {spec.task_id: spec for spec in tasks}
    target = base.members(group)
    missing = [task_id for task_id in target if task_id not in by_id]
    if missing:
        raise UnknownTask(missing[0])

    inner = partition([by_id[task_id] for task_id in target], rule)
    groups = []
    for name, members in base.groups:
        if name == group:
            groups.extend(inner.groups)
        else:
            groups.append((name, members))
    return TaskPartition(groups=tuple(groups))
