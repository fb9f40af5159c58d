"""
合成タスクスイートの生成。

各タスクは単語混合の分類問題: ラベルごとに信号語の集合を持ち、文書は
信号語と背景語から作る。similarity は参照タスクと共有する信号語の割合で、
負の値では共有語とラベルの対応を反転させる（負の転移を作るため）。
"""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import InvalidParameter
from services.registry import (
    InputArity,
    LabelScheme,
    Modality,
    TaskSpec,
    save_manifest,
    write_records,
)
from services.samplers import make_generator
from utils.file_handler import ensure_writable_dir

logger = logging.getLogger(__name__)

PAIR_SEPARATOR = " [SEP] "
MAX_DEV_RETRIES = 100


class SynthTaskConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str = Field(min_length=1)
    modality: Modality = Modality.CLASSIFICATION
    input_arity: InputArity = InputArity.SINGLE_SENTENCE
    label_scheme: LabelScheme = LabelScheme.BINARY
    n_train: int = Field(ge=1)
    n_dev: Optional[int] = Field(default=None, ge=1)
    num_labels: int = Field(default=2, ge=2)
    vocab_size: Optional[int] = None
    label_noise: float = Field(default=0.0, ge=0.0, lt=0.5)
    similarity: float = Field(default=0.0, ge=-1.0, le=1.0)
    signal_rate: float = Field(default=0.3, gt=0.0, le=1.0)
    doc_length: int = Field(default=12, ge=2)

    @model_validator(mode="after")
    def _check_sizes(self) -> "SynthTaskConfig":
        if self.n_train < self.num_labels:
            raise ValueError(f"{self.task_id}: n_train must be >= num_labels")
        if self.vocab_size is None:
            object.__setattr__(self, "vocab_size", max(100, 20 * self.num_labels))
        if self.vocab_size < 10 * self.num_labels:
            raise ValueError(f"{self.task_id}: vocab_size must be >= 10 * num_labels")
        if self.n_dev is None:
            object.__setattr__(self, "n_dev", max(200, self.n_train // 10))
        if self.label_scheme == LabelScheme.BINARY and self.num_labels != 2:
            raise ValueError(f"{self.task_id}: binary tasks have exactly 2 labels")
        self.spec()
        return self

    @property
    def signal_words_per_label(self) -> int:
        return self.vocab_size // (2 * self.num_labels)

    @property
    def background_size(self) -> int:
        return self.vocab_size - self.num_labels * self.signal_words_per_label

    def spec(self) -> TaskSpec:
        return TaskSpec(
            task_id=self.task_id,
            modality=self.modality,
            input_arity=self.input_arity,
            label_scheme=self.label_scheme,
            prefix=f"{self.task_id}:",
        )


class SynthSuiteConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tasks: Tuple[SynthTaskConfig, ...] = Field(min_length=1)
    seed: int = 0
    reference: Optional[str] = None

    @model_validator(mode="after")
    def _check_tasks(self) -> "SynthSuiteConfig":
        ids = [task.task_id for task in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique")
        if self.reference is None:
            object.__setattr__(self, "reference", ids[0])
        elif self.reference not in ids:
            raise ValueError(f"reference task {self.reference} is not in the suite")
        return self

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def task(self, task_id: str) -> SynthTaskConfig:
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise KeyError(task_id)


# --- 語彙 ---

def _pool_word(slot: int, x: int) -> str:
    return f"s{slot:03d}w{x:02d}"


def _signal_vocabulary(
    task_index: int,
    task: SynthTaskConfig,
    reference: SynthTaskConfig,
    is_reference: bool,
) -> List[List[str]]:
    """ラベルごとの信号語リスト"""
    m = task.signal_words_per_label
    m_ref = reference.signal_words_per_label
    k, k_ref = task.num_labels, reference.num_labels

    words = []
    for j in range(k):
        if is_reference:
            n_shared, slot = m, j
        else:
            n_shared = min(round(abs(task.similarity) * m), m_ref)
            slot = j if task.similarity >= 0 else k - 1 - j
        if slot >= k_ref:
            n_shared = 0
        label_words = [_pool_word(slot, x) for x in range(n_shared)]
        label_words += [f"t{task_index:02d}l{j:03d}w{x:02d}" for x in range(n_shared, m)]
        words.append(label_words)
    return words


def _target(task: SynthTaskConfig, label: int) -> str:
    stem = "label" if task.modality == Modality.CLASSIFICATION else "answer"
    return f"{stem}_{label:03d}"


def _documents(
    rng,
    task: SynthTaskConfig,
    signal: List[List[str]],
    labels,
    noisy,
) -> List[Tuple[str, str]]:
    n, length = len(labels), task.doc_length
    is_signal = rng.random((n, length)) < task.signal_rate
    signal_idx = rng.integers(task.signal_words_per_label, size=(n, length))
    background_idx = rng.integers(task.background_size, size=(n, length))
    shift = rng.integers(1, task.num_labels, size=n)
    flip = rng.random(n) < task.label_noise

    rows = []
    for i in range(n):
        label = int(labels[i])
        tokens = [
            signal[label][signal_idx[i, p]] if is_signal[i, p] else f"b{background_idx[i, p]:04d}"
            for p in range(length)
        ]
        if task.input_arity == InputArity.SENTENCE_PAIR:
            half = length // 2
            text = " ".join(tokens[:half]) + PAIR_SEPARATOR + " ".join(tokens[half:])
        else:
            text = " ".join(tokens)
        target = label
        if noisy[i] and flip[i]:
            target = (label + int(shift[i])) % task.num_labels
        rows.append((text, _target(task, target)))
    return rows


def generate_task(
    task_index: int,
    task: SynthTaskConfig,
    suite: SynthSuiteConfig,
) -> Tuple[List[Tuple[str, str]], List[Tuple[str, str]]]:
    """1タスク分の (train, dev) 生レコード"""
    rng = make_generator([suite.seed, task_index])
    reference = suite.task(suite.reference)
    signal = _signal_vocabulary(task_index, task, reference, task.task_id == suite.reference)

    # 先頭k件は全ラベルを1回ずつ（ノイズなし）
    k = task.num_labels
    labels = np.concatenate([np.arange(k), rng.integers(k, size=task.n_train - k)])
    noisy = np.arange(task.n_train) >= k
    train = _documents(rng, task, signal, labels, noisy)

    seen = set(train)
    dev: List[Tuple[str, str]] = []
    for _ in range(MAX_DEV_RETRIES):
        need = task.n_dev - len(dev)
        if need == 0:
            break
        candidates = _documents(rng, task, signal, rng.integers(k, size=need), np.ones(need, dtype=bool))
        dev.extend(row for row in candidates if row not in seen)
    if len(dev) < task.n_dev:
        raise InvalidParameter(
            f"{task.task_id}.vocab_size", task.vocab_size, "too small to draw dev records disjoint from train"
        )
    return train, dev


def generate(config: SynthSuiteConfig, out_dir: Union[str, Path]) -> Path:
    """スイートを生成し、マニフェストとレコードファイルを書き出す"""
    out = ensure_writable_dir(out_dir)
    paths: Dict[str, Tuple[str, str]] = {}
    for i, task in enumerate(config.tasks):
        train, dev = generate_task(i, task, config)
        train_name, dev_name = f"{task.task_id}.train.jsonl", f"{task.task_id}.dev.jsonl"
        write_records(out / train_name, train)
        write_records(out / dev_name, dev)
        paths[task.task_id] = (train_name, dev_name)
        logger.info(f"Generated {task.task_id}: {len(train)} train / {len(dev)} dev records")

    manifest = out / "manifest.json"
    save_manifest(manifest, [task.spec() for task in config.tasks], paths)
    logger.info(f"Wrote manifest for {config.num_tasks} task(s): {manifest}")
    return manifest


# --- 公開ベンチマークの件数に合わせたプリセット ---

class SuitePreset(str, Enum):
    CLUE_LIKE = "clue_like"
    APPLICATION_LIKE = "application_like"


_S, _P = InputArity.SINGLE_SENTENCE, InputArity.SENTENCE_PAIR
_B, _O, _M = LabelScheme.BINARY, LabelScheme.ORDINAL, LabelScheme.MULTICLASS

# (task_id, n_train, num_labels, input_arity, label_scheme)
CLUE_LIKE_TASKS = (
    ("cwsc", 947, 2, _S, _B),
    ("tnews", 49726, 15, _S, _M),
    ("iflytek", 11425, 119, _S, _M),
    ("csl", 19836, 2, _P, _B),
    ("afqmc", 6564, 2, _P, _B),
    ("ocnli", 50437, 3, _P, _M),
)
CLUE_LIKE_GENERATION = ("cmrc", 10143)

APPLICATION_LIKE_TASKS = (
    ("rc-a", 17059, 2, _S, _B),
    ("rc-i", 6056, 2, _S, _B),
    ("uc-a", 1950, 2, _S, _B),
    ("uc-i", 8624, 2, _S, _B),
    ("pg-a", 2341, 2, _S, _B),
    ("pg-i", 2108, 2, _S, _B),
    ("id", 6884, 2, _S, _B),
    ("csa", 5011, 2, _S, _B),
    ("nr-a", 40397, 2, _S, _B),
    ("nr-i", 19726, 2, _S, _B),
    ("hs", 1328, 2, _S, _B),
    ("idm", 1200, 2, _S, _B),
    ("csqr", 2489, 4, _S, _O),
    ("see", 9314, 5, _S, _O),
    ("rtc", 8447, 12, _S, _M),
    ("csc", 8168, 10, _S, _M),
    ("ec", 6564, 8, _S, _M),
)
APPLICATION_LIKE_GENERATION = ("cs", 1822)

_PRESETS = {
    SuitePreset.CLUE_LIKE: (CLUE_LIKE_TASKS, CLUE_LIKE_GENERATION, "tnews"),
    SuitePreset.APPLICATION_LIKE: (APPLICATION_LIKE_TASKS, APPLICATION_LIKE_GENERATION, "nr-a"),
}


def preset_suite(
    preset: Union[str, SuitePreset],
    include_generation: bool = False,
    scale: float = 1.0,
    seed: int = 0,
    label_noise: float = 0.1,
    similarity: float = 0.25,
) -> SynthSuiteConfig:
    """プリセットの件数プロファイルを持つスイート設定（scaleで縮小）"""
    preset = SuitePreset(preset)
    if not 0 < scale <= 1:
        raise InvalidParameter("scale", scale, "must be in (0, 1]")
    rows, generation, reference = _PRESETS[preset]
    ref_labels = next(k for task_id, _, k, _, _ in rows if task_id == reference)

    def scaled(n: int, k: int) -> int:
        return n if scale == 1 else max(k, math.ceil(n * scale))

    tasks = [
        SynthTaskConfig(
            task_id=task_id,
            input_arity=arity,
            label_scheme=scheme,
            n_train=scaled(n, k),
            num_labels=k,
            label_noise=label_noise,
            similarity=1.0 if task_id == reference else similarity,
        )
        for task_id, n, k, arity, scheme in rows
    ]
    if include_generation:
        task_id, n = generation
        tasks.append(SynthTaskConfig(
            task_id=task_id,
            modality=Modality.GENERATION,
            label_scheme=LabelScheme.FREEFORM,
            n_train=scaled(n, ref_labels),
            num_labels=ref_labels,
            label_noise=label_noise,
            similarity=-1.0,
        ))
    return SynthSuiteConfig(tasks=tuple(tasks), seed=seed, reference=reference)
