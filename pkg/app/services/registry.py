import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import (
    DataError,
    DuplicateTask,
    EmptyInput,
    EmptySplit,
    MalformedRecord,
    MissingFile,
    NoTasks,
    UnknownTask,
    WrongModality,
)
from utils.file_handler import write_text_atomic

logger = logging.getLogger(__name__)

PREFIX_SEPARATOR = " "


class Modality(str, Enum):
    CLASSIFICATION = "classification"
    GENERATION = "generation"


class InputArity(str, Enum):
    SINGLE_SENTENCE = "single_sentence"
    SENTENCE_PAIR = "sentence_pair"


class LabelScheme(str, Enum):
    BINARY = "binary"
    ORDINAL = "ordinal"
    MULTICLASS = "multiclass"
    FREEFORM = "freeform"


class Metric(str, Enum):
    ACCURACY = "accuracy"
    EXACT_MATCH = "exact_match"


class TaskSpec(BaseModel):
    """タスク定義（ID・タクソノミー・プレフィックス）"""

    model_config = ConfigDict(frozen=True)

    task_id: str = Field(min_length=1)
    modality: Modality
    input_arity: InputArity
    label_scheme: LabelScheme
    prefix: str = Field(min_length=1)
    metric: Optional[Metric] = None

    @model_validator(mode="after")
    def _check_taxonomy(self) -> "TaskSpec":
        if self.modality == Modality.GENERATION and self.label_scheme != LabelScheme.FREEFORM:
            raise ValueError("generation tasks must use the freeform label scheme")
        if self.modality == Modality.CLASSIFICATION and self.label_scheme == LabelScheme.FREEFORM:
            raise ValueError("classification tasks cannot use the freeform label scheme")
        if not self.prefix.strip():
            raise ValueError("prefix must not be blank")
        if self.metric is None:
            default = Metric.ACCURACY if self.modality == Modality.CLASSIFICATION else Metric.EXACT_MATCH
            object.__setattr__(self, "metric", default)
        return self


@dataclass(frozen=True)
class Record:
    input: str
    target: str

    def __post_init__(self):
        if not self.input:
            raise EmptyInput()
        if not self.target:
            raise DataError("Record target must not be empty")


@dataclass(frozen=True)
class TaskDataset:
    task_id: str
    train: Tuple[Record, ...]
    dev: Tuple[Record, ...]
    modality: Modality = Modality.CLASSIFICATION
    unseen_dev_targets: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.train:
            raise EmptySplit(self.task_id, "train")
        if not self.dev:
            raise EmptySplit(self.task_id, "dev")
        overlap = set(self.train) & set(self.dev)
        if overlap:
            raise DataError(
                f"Task {self.task_id}: {len(overlap)} record(s) appear in both train and dev"
            )

    @property
    def n_train(self) -> int:
        return len(self.train)


class Registry:
    """読み込み済みタスクの不変コレクション（マニフェスト順）"""

    def __init__(self, entries: Iterable[Tuple[TaskSpec, TaskDataset]]):
        self._entries: "OrderedDict[str, Tuple[TaskSpec, TaskDataset]]" = OrderedDict()
        for spec, dataset in entries:
            if spec.task_id in self._entries:
                raise DuplicateTask(spec.task_id)
            if dataset.task_id != spec.task_id:
                raise DataError(f"Dataset {dataset.task_id} does not match spec {spec.task_id}")
            self._entries[spec.task_id] = (spec, dataset)

    @property
    def task_ids(self) -> List[str]:
        return list(self._entries)

    def spec(self, task_id: str) -> TaskSpec:
        return self._get(task_id)[0]

    def dataset(self, task_id: str) -> TaskDataset:
        return self._get(task_id)[1]

    def specs(self) -> List[TaskSpec]:
        return [spec for spec, _ in self._entries.values()]

    def sizes(self) -> Dict[str, int]:
        return {task_id: ds.n_train for task_id, (_, ds) in self._entries.items()}

    def subset(self, task_ids: Iterable[str]) -> "Registry":
        """指定タスクのみのレジストリ（元の順序を維持）"""
        wanted = set(task_ids)
        for task_id in wanted:
            self._get(task_id)
        return Registry(entry for task_id, entry in self._entries.items() if task_id in wanted)

    def _get(self, task_id: str) -> Tuple[TaskSpec, TaskDataset]:
        try:
            return self._entries[task_id]
        except KeyError:
            raise UnknownTask(task_id) from None

    def __contains__(self, task_id: object) -> bool:
        return task_id in self._entries

    def __iter__(self) -> Iterator[Tuple[TaskSpec, TaskDataset]]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)


def cast_text_to_text(spec: TaskSpec, raw_input: str, raw_target: str) -> Record:
    """タスクプレフィックスを付けてtext-to-text形式に変換"""
    if not raw_input or not raw_input.strip():
        raise EmptyInput(spec.task_id)
    return Record(input=f"{spec.prefix}{PREFIX_SEPARATOR}{raw_input}", target=raw_target)


def target_vocabulary(dataset: TaskDataset) -> List[str]:
    """trainの正解文字列（重複なし・辞書順）"""
    return sorted({record.target for record in dataset.train})


def classification_labels(dataset: TaskDataset) -> List[str]:
    if dataset.modality != Modality.CLASSIFICATION:
        raise WrongModality(dataset.task_id, Modality.CLASSIFICATION.value)
    return target_vocabulary(dataset)


def read_raw_records(path: Union[str, Path]) -> List[Tuple[str, str]]:
    """JSON Lines形式のレコードファイルを読み込む（空行は無視）"""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)

    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(path, line_no, f"invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise MalformedRecord(path, line_no, "expected a JSON object")
            raw_input, raw_target = obj.get("input"), obj.get("target")
            if not isinstance(raw_input, str) or not raw_input.strip():
                raise MalformedRecord(path, line_no, "missing or empty 'input'")
            if not isinstance(raw_target, str) or not raw_target:
                raise MalformedRecord(path, line_no, "missing or empty 'target'")
            rows.append((raw_input, raw_target))
    return rows


def write_records(path: Union[str, Path], rows: Sequence[Tuple[str, str]]) -> None:
    """レコードをJSON Lines形式で書き出す"""

    lines = [json.dumps({"input": i, "target": t}, ensure_ascii=False) for i, t in rows]
    write_text_atomic(path, "\n".join(lines) + "\n")


def _load_manifest(manifest_path: Path) -> List[dict]:
    if not manifest_path.is_file():
        raise MissingFile(manifest_path)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"Manifest {manifest_path} is not valid JSON: {e.msg}") from None

    entries = doc.get("tasks") if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise DataError(f"Manifest {manifest_path} must list tasks")
    if not entries:
        raise NoTasks(str(manifest_path))
    return entries


def load_tasks(manifest_path: Union[str, Path]) -> Registry:
    """マニフェストからタスクとデータセットを読み込む"""
    manifest_path = Path(manifest_path)
    base_dir = manifest_path.parent
    entries = _load_manifest(manifest_path)

    seen = set()
    loaded = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise DataError(f"Manifest entry #{i} must be an object")
        task_id = entry.get("task_id")
        if task_id in seen:
            raise DuplicateTask(task_id)
        seen.add(task_id)

        try:
            spec = TaskSpec(**{k: v for k, v in entry.items() if k not in ("train_path", "dev_path")})
        except ValidationError as e:
            raise DataError(f"Invalid task entry {task_id!r}: {e.errors()[0]['msg']}") from None

        splits = {}
        for split in ("train", "dev"):
            rel = entry.get(f"{split}_path")
            if not rel:
                raise DataError(f"Task {task_id} has no {split}_path")
            rows = read_raw_records(base_dir / rel)
            if not rows:
                raise EmptySplit(task_id, split)
            splits[split] = tuple(cast_text_to_text(spec, raw_input, target) for raw_input, target in rows)

        train_targets = {record.target for record in splits["train"]}
        unseen = sum(1 for record in splits["dev"] if record.target not in train_targets)
        if unseen:
            logger.warning(f"Task {task_id}: {unseen} dev record(s) have targets unseen in train")

        dataset = TaskDataset(
            task_id=spec.task_id,
            train=splits["train"],
            dev=splits["dev"],
            modality=spec.modality,
            unseen_dev_targets=unseen,
        )
        loaded.append((spec, dataset))
        logger.info(f"Loaded task {task_id}: n_train={dataset.n_train}, n_dev={len(dataset.dev)}")

    return Registry(loaded)


def save_manifest(
    path: Union[str, Path],
    specs: Sequence[TaskSpec],
    paths: Dict[str, Tuple[str, str]],
) -> None:
    """マニフェストJSONを書き出す（paths: task_id -> (train_path, dev_path)）"""

    tasks = []
    for spec in specs:
        train_path, dev_path = paths[spec.task_id]
        tasks.append({
            **spec.model_dump(mode="json"),
            "train_path": train_path,
            "dev_path": dev_path,
        })
    write_text_atomic(path, json.dumps({"tasks": tasks}, ensure_ascii=False, indent=2) + "\n")
