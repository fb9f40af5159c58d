"""
共有トランク付き線形ソフトマックス分類器の学習。

- 特徴量: 単語unigram+bigramのハッシュ（L2正規化）
- タスクごとのヘッド (D×k) は1つの行列 (D×Σk) に列を並べて保持、バイアスはタスクごと、全タスク共有のトランク (D×ラベルスロット)
- 最適化: プレーンSGD（モーメンタムなし）
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator
from sklearn.feature_extraction.text import HashingVectorizer

from errors import EmptyDev, RegistryMismatch, UnknownTask
from services.curriculum import CurriculumPlan, resolve_steps
from services.registry import Record, Registry, target_vocabulary
from services.samplers import MixtureStream, make_generator, weights_for

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_DIM = 2 ** 18
TOKEN_PATTERN = r"(?u)\b\w+\b"


class TrainerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.1, gt=0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0
    l2: float = Field(default=1e-6, ge=0)
    eval_every: int = Field(default=500, ge=1)
    hash_dim: int = Field(default=2 ** 14, ge=2)
    shared_trunk: bool = True
    eval_train: bool = False

    @field_validator("hash_dim")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("hash_dim must be a power of two")
        return value


# --- 特徴量 ---

@dataclass(frozen=True)
class FeatureVector:
    dim: int
    weights: Dict[int, float]

    def __post_init__(self):
        if any(not 0 <= i < self.dim for i in self.weights):
            raise ValueError("feature index out of range")

    @property
    def is_zero(self) -> bool:
        return not self.weights


@lru_cache(maxsize=8)
def _vectorizer(dim: int) -> HashingVectorizer:
    return HashingVectorizer(
        n_features=dim,
        ngram_range=(1, 2),
        lowercase=True,
        token_pattern=TOKEN_PATTERN,
        alternate_sign=False,
        norm="l2",
        dtype=np.float64,
    )


def featurize_batch(texts: Sequence[str], dim: int = DEFAULT_FEATURE_DIM) -> sp.csr_matrix:
    """テキスト列をCSR行列 (n×D) に変換"""
    X = _vectorizer(dim).transform(list(texts))
    X.sort_indices()
    return X.tocsr()


@lru_cache(maxsize=64)
def _featurize_split(texts: Tuple[str, ...], dim: int) -> sp.csr_matrix:
    # 戻り値は共有されるので書き換えない
    return featurize_batch(texts, dim)


def featurize(text: str, dim: int = DEFAULT_FEATURE_DIM) -> FeatureVector:
    """ハッシュ化したunigram+bigramのbag-of-words"""
    row = featurize_batch([text], dim)
    return FeatureVector(dim=dim, weights={int(i): float(v) for i, v in zip(row.indices, row.data)})


# --- モデル ---

class WeightMatrix:
    """スケール係数付きの重み（L2減衰をO(1)で適用する）"""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.scale = 1.0

    def dense(self) -> np.ndarray:
        return self.values * self.scale

    def product(self, X: sp.csr_matrix) -> np.ndarray:
        return np.asarray(X @ self.values) * self.scale

    def product_rows(self, Xc: sp.csr_matrix, rows: np.ndarray) -> np.ndarray:
        """列をrowsに詰めた行列Xcとの積（Xc @ W[rows]）"""
        return np.asarray(Xc @ self.values[rows]) * self.scale

    def add_rows(self, rows: np.ndarray, delta: np.ndarray) -> None:
        width = delta.shape[1]
        self.values[rows, :width] += delta / self.scale

    def decay(self, factor: float) -> None:
        self.scale *= factor
        if self.scale < 1e-9:
            self.values *= self.scale
            self.scale = 1.0


@dataclass
class TaskHead:
    labels: List[str]
    columns: slice
    bias: np.ndarray

    @property
    def label_index(self) -> Dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}


@dataclass
class Model:
    """全タスクのヘッドを横に並べた重み (D×Σk) と共有トランク (D×max k)"""

    dim: int
    heads: Dict[str, TaskHead]
    weights: WeightMatrix
    trunk: Optional[WeightMatrix] = None

    @property
    def shared_trunk(self) -> bool:
        return self.trunk is not None

    @classmethod
    def initialize(
        cls,
        registry: Registry,
        task_ids: Sequence[str],
        dim: int,
        shared_trunk: bool = True,
        prior_bias: bool = True,
    ) -> "Model":
        """ゼロ重み＋（任意で）trainラベル事前分布の対数をバイアスに"""
        heads = {}
        offset = 0
        for task_id in task_ids:
            dataset = registry.dataset(task_id)
            labels = target_vocabulary(dataset)
            bias = np.zeros(len(labels))
            if prior_bias:
                index = {label: i for i, label in enumerate(labels)}
                counts = np.bincount([index[r.target] for r in dataset.train], minlength=len(labels))
                bias = np.log(counts / counts.sum())
            heads[task_id] = TaskHead(labels=labels, columns=slice(offset, offset + len(labels)), bias=bias)
            offset += len(labels)

        trunk = None
        if shared_trunk:
            width = max(len(head.labels) for head in heads.values())
            trunk = WeightMatrix(np.zeros((dim, width)))
        return cls(dim=dim, heads=heads, weights=WeightMatrix(np.zeros((dim, offset))), trunk=trunk)

    def head(self, task_id: str) -> TaskHead:
        try:
            return self.heads[task_id]
        except KeyError:
            raise UnknownTask(task_id) from None

    def head_weights(self, task_id: str) -> np.ndarray:
        return self.weights.dense()[:, self.head(task_id).columns]

    def logits(self, task_id: str, X: sp.csr_matrix) -> np.ndarray:
        head = self.head(task_id)
        z = self.weights.product(X)[:, head.columns] + head.bias
        if self.trunk is not None:
            z = z + self.trunk.product(X)[:, :len(head.labels)]
        return z

    def predict(self, task_id: str, X: sp.csr_matrix) -> np.ndarray:
        """argmax（同点は最小のラベル番号）"""
        return np.argmax(self.logits(task_id, X), axis=1)

    def matrices(self) -> List[WeightMatrix]:
        if self.trunk is not None:
            return [self.weights, self.trunk]
        return [self.weights]


# --- 損失と勾配 ---

def softmax_residual(logits: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(softmax − one-hot) と各サンプルの交差エントロピー"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    rows = np.arange(len(y))
    ce = np.log(denom[:, 0]) - shifted[rows, y]
    probs[rows, y] -= 1.0
    return probs, ce


def loss_and_gradient(
    head_w: np.ndarray,
    bias: np.ndarray,
    trunk_w: Optional[np.ndarray],
    X: sp.csr_matrix,
    y: np.ndarray,
    normalizer: float,
    l2: float = 0.0,
) -> Tuple[float, np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """密な重みでの損失と解析的勾配 (d_head, d_bias, d_trunk)"""
    effective = head_w if trunk_w is None else head_w + trunk_w
    logits = np.asarray(X @ effective) + bias
    residual, ce = softmax_residual(logits, y)
    residual /= normalizer

    data_grad = np.asarray(X.T @ residual)
    loss = ce.sum() / normalizer + 0.5 * l2 * float(np.sum(head_w ** 2))
    d_head = data_grad + l2 * head_w
    d_trunk = None
    if trunk_w is not None:
        loss += 0.5 * l2 * float(np.sum(trunk_w ** 2))
        d_trunk = data_grad + l2 * trunk_w
    return float(loss), d_head, residual.sum(axis=0), d_trunk


def gradient_check(
    config: TrainerConfig,
    batch: Sequence[Record],
    num_coords: int = 40,
    h: float = 1e-5,
    zero_init: bool = False,
) -> float:
    """解析的勾配と中心差分の最大相対誤差"""
    labels = sorted({record.target for record in batch})
    index = {label: i for i, label in enumerate(labels)}
    X = featurize_batch([record.input for record in batch], config.hash_dim)
    y = np.array([index[record.target] for record in batch])
    k, dim = len(labels), config.hash_dim

    rng = make_generator(config.seed)
    if zero_init:
        params = {"head": np.zeros((dim, k)), "bias": np.zeros(k)}
    else:
        params = {"head": rng.normal(0, 0.1, (dim, k)), "bias": rng.normal(0, 0.1, k)}
    if config.shared_trunk:
        params["trunk"] = np.zeros((dim, k)) if zero_init else rng.normal(0, 0.1, (dim, k))

    def loss_fn() -> float:
        return loss_and_gradient(
            params["head"], params["bias"], params.get("trunk"), X, y, config.batch_size, config.l2
        )[0]

    _, d_head, d_bias, d_trunk = loss_and_gradient(
        params["head"], params["bias"], params.get("trunk"), X, y, config.batch_size, config.l2
    )
    analytic = {"head": d_head, "bias": d_bias, "trunk": d_trunk}

    # バッチに現れる特徴の行だけを検査
    rows = np.unique(X.indices)
    coords = [("bias", (c,)) for c in range(k)]
    for name in ("head", "trunk"):
        if name in params:
            coords.extend((name, (r, c)) for r in rows for c in range(k))
    picks = rng.choice(len(coords), size=min(num_coords, len(coords)), replace=False)

    max_error = 0.0
    for pick in sorted(picks.tolist()):
        name, pos = coords[pick]
        original = params[name][pos]
        params[name][pos] = original + h
        plus = loss_fn()
        params[name][pos] = original - h
        minus = loss_fn()
        params[name][pos] = original

        numeric = (plus - minus) / (2 * h)
        exact = analytic[name][pos]
        denom = max(abs(numeric), abs(exact), 1e-8)
        max_error = max(max_error, abs(numeric - exact) / denom)

    logger.info(f"Gradient check over {len(picks)} coordinate(s): max relative error {max_error:.3e}")
    return max_error


# --- 学習曲線 ---

@dataclass(frozen=True)
class CurvePoint:
    step: int
    task_id: str
    split: str
    metric: float


@dataclass
class LearningCurves:
    points: List[CurvePoint] = field(default_factory=list)

    def add(self, step: int, task_id: str, split: str, metric: float) -> None:
        self.points.append(CurvePoint(step, task_id, split, float(metric)))

    def series(self, task_id: str, split: str = "dev") -> List[Tuple[int, float]]:
        return [(p.step, p.metric) for p in self.points if p.task_id == task_id and p.split == split]

    def final(self, task_id: str, split: str = "dev") -> float:
        series = self.series(task_id, split)
        if not series:
            raise UnknownTask(task_id)
        return series[-1][1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "task_id", "split", "metric"])
        for p in self.points:
            writer.writerow([p.step, p.task_id, p.split, repr(p.metric)])
        return buf.getvalue()


# --- 学習 ---

@dataclass
class _TaskFeatures:
    X_train: sp.csr_matrix
    y_train: np.ndarray
    X_dev: sp.csr_matrix
    dev_targets: Tuple[str, ...]


@dataclass
class _TrainingSet:
    """全タスクのtrain特徴を縦に積んだもの（バッチは1回の行抽出で作る）"""

    task_ids: List[str]
    X: sp.csr_matrix
    y: np.ndarray
    offsets: np.ndarray
    per_task: Dict[str, _TaskFeatures]
    positions: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.positions = {task_id: i for i, task_id in enumerate(self.task_ids)}


def _build_features(registry: Registry, model: Model, task_ids: Sequence[str]) -> _TrainingSet:
    per_task = {}
    for task_id in task_ids:
        dataset = registry.dataset(task_id)
        index = model.head(task_id).label_index
        per_task[task_id] = _TaskFeatures(
            X_train=_featurize_split(tuple(r.input for r in dataset.train), model.dim),
            y_train=np.array([index[r.target] for r in dataset.train]),
            X_dev=_featurize_split(tuple(r.input for r in dataset.dev), model.dim),
            dev_targets=tuple(r.target for r in dataset.dev),
        )
    sizes = [per_task[t].X_train.shape[0] for t in task_ids]
    return _TrainingSet(
        task_ids=list(task_ids),
        X=sp.vstack([per_task[t].X_train for t in task_ids], format="csr"),
        y=np.concatenate([per_task[t].y_train for t in task_ids]),
        offsets=np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64),
        per_task=per_task,
    )


def _accuracy(model: Model, task_id: str, X: sp.csr_matrix, targets: Sequence[str]) -> float:
    labels = model.head(task_id).labels
    predicted = model.predict(task_id, X)
    correct = sum(1 for p, t in zip(predicted.tolist(), targets) if labels[p] == t)
    return correct / len(targets)


def evaluate(model: Model, task_id: str, dev: Sequence[Record]) -> float:
    """完全一致の正解率（分類・生成とも）"""
    model.head(task_id)
    if not dev:
        raise EmptyDev(task_id)
    X = featurize_batch([r.input for r in dev], model.dim)
    return _accuracy(model, task_id, X, [r.target for r in dev])


def _sgd_step(
    model: Model,
    data: _TrainingSet,
    batch: Sequence[Tuple[str, int]],
    config: TrainerConfig,
) -> float:
    positions = data.positions
    task_of = np.array([positions[task_id] for task_id, _ in batch])
    picked = data.offsets[task_of] + np.array([index for _, index in batch])
    X = data.X[picked]
    y = data.y[picked]

    # バッチに現れる特徴の行だけで計算する
    rows, columns = np.unique(X.indices, return_inverse=True)
    Xc = sp.csr_matrix((X.data, columns.ravel(), X.indptr), shape=(X.shape[0], len(rows)))
    head_logits = model.weights.product_rows(Xc, rows)
    trunk_logits = model.trunk.product_rows(Xc, rows) if model.trunk is not None else None

    head_residual = np.zeros_like(head_logits)
    trunk_residual = np.zeros_like(trunk_logits) if trunk_logits is not None else None
    bias_grads = []
    loss = 0.0
    for pos in np.unique(task_of).tolist():
        head = model.heads[data.task_ids[pos]]
        width = len(head.labels)
        members = np.flatnonzero(task_of == pos)
        z = head_logits[members, head.columns] + head.bias
        if trunk_logits is not None:
            z = z + trunk_logits[members, :width]
        residual, ce = softmax_residual(z, y[members])
        residual /= config.batch_size
        loss += ce.sum() / config.batch_size

        head_residual[members, head.columns] = residual
        if trunk_residual is not None:
            trunk_residual[members, :width] = residual
        bias_grads.append((head, residual.sum(axis=0)))

    # 勾配は更新前の重みで計算済み: w ← (1 − lr·l2)·w − lr·g
    if config.l2 > 0:
        factor = 1.0 - config.learning_rate * config.l2
        for matrix in model.matrices():
            matrix.decay(factor)

    lr = config.learning_rate
    model.weights.add_rows(rows, -lr * np.asarray(Xc.T @ head_residual))
    if trunk_residual is not None:
        model.trunk.add_rows(rows, -lr * np.asarray(Xc.T @ trunk_residual))
    for head, grad_bias in bias_grads:
        head.bias -= lr * grad_bias
    return loss


def _record(
    curves: LearningCurves,
    model: Model,
    data: _TrainingSet,
    step: int,
    eval_train: bool,
) -> None:
    for task_id, feats in data.per_task.items():
        curves.add(step, task_id, "dev", _accuracy(model, task_id, feats.X_dev, feats.dev_targets))
        if eval_train:
            labels = model.head(task_id).labels
            targets = [labels[i] for i in feats.y_train.tolist()]
            curves.add(step, task_id, "train", _accuracy(model, task_id, feats.X_train, targets))


def train(
    plan: CurriculumPlan,
    registry: Registry,
    config: TrainerConfig,
) -> Tuple[Model, LearningCurves]:
    """プランのステージ順にSGDで学習する"""
    task_ids = plan.task_ids
    missing = [t for t in task_ids if t not in registry]
    if missing:
        raise RegistryMismatch(f"Plan tasks {missing} are not in the registry")

    model = Model.initialize(registry, task_ids, config.hash_dim, config.shared_trunk)
    features = _build_features(registry, model, task_ids)
    sizes = {t: registry.dataset(t).n_train for t in task_ids}
    steps = resolve_steps(plan, sizes, config.batch_size)
    logger.info(f"Training {len(task_ids)} task(s) for {sum(steps)} step(s): {dict(zip([s.name for s in plan.stages], steps))}")

    curves = LearningCurves()
    global_step = 0
    last_recorded = None
    for stage_index, (stage, n_steps) in enumerate(zip(plan.stages, steps)):
        # ステージ間で重みは引き継ぐ（SGDなのでオプティマイザ状態はない）
        stage_sizes = {t: sizes[t] for t in stage.task_ids}
        weights = weights_for(stage.strategy, stage_sizes)
        stream = MixtureStream(weights, stage_sizes, np.random.SeedSequence([config.seed, stage_index]))
        logger.info(f"Stage {stage.name}: {n_steps} step(s), {stage.strategy.describe()}, tasks={list(stage.task_ids)}")

        for _ in range(n_steps):
            loss = _sgd_step(model, features, stream.draw(config.batch_size), config)
            global_step += 1
            if global_step % config.eval_every == 0:
                _record(curves, model, features, global_step, config.eval_train)
                last_recorded = global_step
                logger.debug(f"step {global_step}: batch loss {loss:.4f}")

    if last_recorded != global_step:
        _record(curves, model, features, global_step, config.eval_train)
    return model, curves
