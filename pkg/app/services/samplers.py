import logging
import math
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from errors import InvalidParameter, NoTasks, RegistryMismatch, UnsupportedMethod
from services.registry import Record, Registry

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12
RNG_NAME = "numpy.PCG64"

# よく使われる温度τ
TAU_PRESETS: Dict[str, float] = {
    "mild": 1.43,
    "moderate": 2.0,
    "strong": 3.33,
}

# 外部定義のベースライン・対象外の手法
UNSUPPORTED_KINDS = ("unimax", "few_shot")


class StrategyKind(str, Enum):
    INSTANCE_BALANCED = "instance_balanced"
    CLASS_BALANCED = "class_balanced"
    TEMPERATURE_SCALED = "temperature_scaled"
    CAPPED_TEMPERATURE_SCALED = "capped_temperature_scaled"

    @property
    def uses_temperature(self) -> bool:
        return self in (StrategyKind.TEMPERATURE_SCALED, StrategyKind.CAPPED_TEMPERATURE_SCALED)


class StrategyConfig(BaseModel):
    """サンプリング戦略（kind / tau / cap）"""

    model_config = ConfigDict(frozen=True)

    kind: StrategyKind
    tau: Optional[float] = None
    cap: Optional[int] = None

    @field_validator("kind", mode="before")
    @classmethod
    def _reject_unsupported(cls, value):
        if isinstance(value, str) and value.lower() in UNSUPPORTED_KINDS:
            raise UnsupportedMethod(value)
        return value

    @model_validator(mode="after")
    def _check_params(self) -> "StrategyConfig":
        if self.kind.uses_temperature:
            if self.tau is None:
                raise ValueError(f"{self.kind.value} requires tau")
            _check_tau(self.tau)
        elif self.tau is not None:
            raise ValueError(f"{self.kind.value} does not take tau")

        if self.kind == StrategyKind.CAPPED_TEMPERATURE_SCALED:
            if self.cap is None or self.cap < 1:
                raise ValueError("capped_temperature_scaled requires cap >= 1")
        elif self.cap is not None:
            raise ValueError(f"{self.kind.value} does not take cap")
        return self

    def describe(self) -> str:
        parts = [self.kind.value]
        if self.cap is not None:
            parts.append(f"K={self.cap}")
        if self.tau is not None:
            parts.append(f"tau={self.tau:g}")
        return " ".join(parts)


class MixtureWeights(BaseModel):
    """タスクごとの正規化済みサンプリング分布"""

    model_config = ConfigDict(frozen=True)

    entries: Tuple[Tuple[str, float], ...]

    @model_validator(mode="after")
    def _check_distribution(self) -> "MixtureWeights":
        if not self.entries:
            raise ValueError("mixture weights need at least one task")
        ids = [task_id for task_id, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate task ids in mixture weights")
        probs = [p for _, p in self.entries]
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(math.fsum(probs) - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        return self

    @property
    def task_ids(self) -> List[str]:
        return [task_id for task_id, _ in self.entries]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.entries], dtype=np.float64)

    def as_dict(self) -> Dict[str, float]:
        return dict(self.entries)

    def __getitem__(self, task_id: str) -> float:
        return self.as_dict()[task_id]


def _check_tau(tau: float) -> None:
    if tau is None or not math.isfinite(tau) or tau <= 0:
        raise InvalidParameter("tau", tau, "must be a finite number > 0")


def _check_sizes(sizes: Mapping[str, int]) -> None:
    if not sizes:
        raise NoTasks("mixture")
    for task_id, n in sizes.items():
        if n is None or n <= 0:
            raise InvalidParameter(f"n_train[{task_id}]", n, "must be > 0")


def normalize(values: Sequence[float]) -> np.ndarray:
    """合計1に正規化"""
    arr = np.asarray(values, dtype=np.float64)
    return arr / arr.sum()


def _weights(task_ids: Sequence[str], probs: np.ndarray) -> MixtureWeights:
    return MixtureWeights(entries=tuple(zip(task_ids, (float(p) for p in probs))))


def instance_balanced_weights(sizes: Mapping[str, int]) -> MixtureWeights:
    """データ件数に比例した分布 p_l = n_l / Σn"""
    _check_sizes(sizes)
    return _weights(list(sizes), normalize(list(sizes.values())))


def class_balanced_weights(task_ids: Sequence[str]) -> MixtureWeights:
    """全タスク等確率"""
    task_ids = list(task_ids)
    if not task_ids:
        raise NoTasks("mixture")
    return _weights(task_ids, normalize(np.ones(len(task_ids))))


def temperature_scaled_weights(base: MixtureWeights, tau: float) -> MixtureWeights:
    """q_l ∝ p_l^(1/τ)"""
    _check_tau(tau)
    p = base.probabilities
    positive = p > 0

    powered = np.zeros_like(p)
    if tau == 1.0:
        powered[positive] = p[positive]
    else:
        # log空間で計算（最大値で割るので桁落ちしない）
        log_p = np.log(p[positive])
        powered[positive] = np.exp((log_p - log_p.max()) / tau)
    return _weights(base.task_ids, normalize(powered))


def capped_weights(sizes: Mapping[str, int], cap: int, tau: float) -> MixtureWeights:
    """min(n_l, K) で上限を掛けてから温度スケーリング"""
    if cap is None or cap < 1:
        raise InvalidParameter("cap", cap, "must be >= 1")
    _check_tau(tau)
    _check_sizes(sizes)
    capped = {task_id: min(n, cap) for task_id, n in sizes.items()}
    return temperature_scaled_weights(instance_balanced_weights(capped), tau)


def weights_for(strategy: StrategyConfig, sizes: Mapping[str, int]) -> MixtureWeights:
    if strategy.kind == StrategyKind.INSTANCE_BALANCED:
        return instance_balanced_weights(sizes)
    if strategy.kind == StrategyKind.CLASS_BALANCED:
        _check_sizes(sizes)
        return class_balanced_weights(list(sizes))
    if strategy.kind == StrategyKind.TEMPERATURE_SCALED:
        return temperature_scaled_weights(instance_balanced_weights(sizes), strategy.tau)
    return capped_weights(sizes, strategy.cap, strategy.tau)


def make_generator(seed: Union[int, Sequence[int], np.random.SeedSequence]) -> np.random.Generator:
    """PCG64ベースの乱数生成器"""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(seed))


class MixtureStream:
    """重みに従ってタスクを抽選し、タスク内はシャッフル済みエポック順でレコードを返す"""

    rng_name = RNG_NAME

    def __init__(self, weights: MixtureWeights, sizes: Mapping[str, int], seed):
        if set(weights.task_ids) != set(sizes):
            raise RegistryMismatch(
                f"Weights cover {sorted(weights.task_ids)} but data has {sorted(sizes)}"
            )
        self.task_ids = weights.task_ids
        self._cdf = np.cumsum(weights.probabilities)
        self._sizes = [int(sizes[t]) for t in self.task_ids]

        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        task_seq, *record_seqs = root.spawn(1 + len(self.task_ids))
        self._rng = make_generator(task_seq)
        self._record_rngs = [make_generator(s) for s in record_seqs]
        self._orders: List[Optional[np.ndarray]] = [None] * len(self.task_ids)
        self._cursors = [0] * len(self.task_ids)

    def _next_record(self, pos: int) -> int:
        order = self._orders[pos]
        if order is None or self._cursors[pos] >= len(order):
            order = self._record_rngs[pos].permutation(self._sizes[pos])
            self._orders[pos] = order
            self._cursors[pos] = 0
        index = int(order[self._cursors[pos]])
        self._cursors[pos] += 1
        return index

    def draw(self, n: int) -> List[Tuple[str, int]]:
        """n件の (task_id, レコード番号) を抽選"""
        if n < 1:
            raise InvalidParameter("length", n, "must be >= 1")
        u = self._rng.random(n)
        positions = np.minimum(np.searchsorted(self._cdf, u, side="right"), len(self.task_ids) - 1)
        return [(self.task_ids[pos], self._next_record(pos)) for pos in positions.tolist()]

    def __iter__(self) -> Iterator[Tuple[str, int]]:
        while True:
            yield from self.draw(1)


def sample_stream(
    weights: MixtureWeights,
    datasets: Registry,
    seed: int,
    length: int,
) -> List[Tuple[str, Record]]:
    """シード固定のサンプルストリーム"""
    if length < 1:
        raise InvalidParameter("length", length, "must be >= 1")
    if set(weights.task_ids) != set(datasets.task_ids):
        raise RegistryMismatch(
            f"Weights cover {sorted(weights.task_ids)} but registry has {sorted(datasets.task_ids)}"
        )
    stream = MixtureStream(weights, datasets.sizes(), seed)
    return [
        (task_id, datasets.dataset(task_id).train[index])
        for task_id, index in stream.draw(length)
    ]
