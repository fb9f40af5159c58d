import copy
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError, InvalidParameter, UnsupportedMethod
from services.curriculum import DEFAULT_THRESHOLD
from services.samplers import UNSUPPORTED_KINDS, StrategyConfig, StrategyKind
from services.synth import SuitePreset, SynthSuiteConfig, preset_suite
from services.taxonomy import TaxonomyRule
from services.trainer import TrainerConfig

logger = logging.getLogger(__name__)

WORKERS_ENV = "MIXTURE_WORKERS"
DEFAULT_WORKERS = 2

# 元のLLM実験の設定（玩具トレーナーでは使わない。レポートのメタデータ用）
LLM_HYPERPARAMETERS: Dict[str, Dict[str, Any]] = {
    "clue": {
        "learning_rate": 3e-5,
        "batch_size": 1,
        "gradient_accumulation": 8,
        "stage1_epochs": 1,
        "stage2_epochs": 10,
        "cap": 20000,
        "tau": 2.0,
        "step_cap": 15000,
    },
    "application": {
        "learning_rate": 3e-5,
        "batch_size": 1,
        "gradient_accumulation": 8,
        "stage1_epochs": 1,
        "stage2_epochs": 10,
        "cap": 8000,
        "tau": 3.33,
        "step_cap": 15000,
    },
}

STRATEGY_PRESETS: Dict[str, Dict[str, float]] = {
    name: {"cap": values["cap"], "tau": values["tau"]}
    for name, values in LLM_HYPERPARAMETERS.items()
}


class Method(str, Enum):
    INSTANCE_BALANCED = "instance_balanced"
    CLASS_BALANCED = "class_balanced"
    TEMPERATURE_SCALED = "temperature_scaled"
    CAPPED_TEMPERATURE_SCALED = "capped_temperature_scaled"
    TWO_STAGE = "two_stage"


class SynthSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: SuitePreset
    scale: float = Field(default=1.0, gt=0, le=1)
    include_generation: bool = False
    label_noise: float = Field(default=0.1, ge=0, lt=0.5)
    similarity: float = Field(default=0.25, ge=-1, le=1)
    seed: int = 0

    def suite(self) -> SynthSuiteConfig:
        return preset_suite(
            self.preset,
            include_generation=self.include_generation,
            scale=self.scale,
            seed=self.seed,
            label_noise=self.label_noise,
            similarity=self.similarity,
        )


class ExperimentConfig(BaseModel):
    """実験設定（ファイル < CLIフラグ の順で上書き）"""

    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    manifest: Optional[Path] = None
    synth: Optional[SynthSource] = None
    taxonomy: TaxonomyRule = TaxonomyRule.NONE
    method: Method = Method.TWO_STAGE
    profile: Optional[str] = None
    tau: Optional[float] = None
    cap: Optional[int] = Field(default=None, ge=1)
    threshold: float = Field(default=DEFAULT_THRESHOLD, gt=0)
    stage1_epochs: float = Field(default=1.0, gt=0)
    stage2_epochs: float = Field(default=10.0, gt=0)
    epochs: float = Field(default=10.0, gt=0)
    baseline_epochs: int = Field(default=10, ge=1)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    step_cap: Optional[int] = Field(default=15000, ge=1)
    equal_budget: bool = True
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    workers: Optional[int] = Field(default=None, ge=1)
    output_dir: Path = Path("runs")

    @field_validator("method", mode="before")
    @classmethod
    def _reject_unsupported(cls, value):
        if isinstance(value, str) and value.lower() in UNSUPPORTED_KINDS:
            raise UnsupportedMethod(value)
        return value

    @model_validator(mode="after")
    def _check_source(self) -> "ExperimentConfig":
        if (self.manifest is None) == (self.synth is None):
            raise ValueError("exactly one of 'manifest' or 'synth' must be set")
        if self.profile is None:
            is_app = self.synth is not None and self.synth.preset == SuitePreset.APPLICATION_LIKE
            object.__setattr__(self, "profile", "application" if is_app else "clue")
        if self.profile not in STRATEGY_PRESETS:
            raise ValueError(f"unknown profile {self.profile!r}; expected one of {sorted(STRATEGY_PRESETS)}")
        return self

    @property
    def effective_tau(self) -> float:
        return self.tau if self.tau is not None else STRATEGY_PRESETS[self.profile]["tau"]

    @property
    def effective_cap(self) -> int:
        return self.cap if self.cap is not None else int(STRATEGY_PRESETS[self.profile]["cap"])

    def strategy(self, method: Optional[Method] = None) -> StrategyConfig:
        """1段階手法のStrategyConfig"""
        method = Method(method or self.method)
        if method == Method.TWO_STAGE:
            raise InvalidParameter("method", method.value, "two_stage is a plan, not a single strategy")
        kind = StrategyKind(method.value)
        return StrategyConfig(
            kind=kind,
            tau=self.effective_tau if kind.uses_temperature else None,
            cap=self.effective_cap if kind == StrategyKind.CAPPED_TEMPERATURE_SCALED else None,
        )

    def worker_count(self) -> int:
        if self.workers is not None:
            return self.workers
        raw = os.environ.get(WORKERS_ENV)
        if raw:
            try:
                value = int(raw)
            except ValueError:
                raise InvalidParameter(WORKERS_ENV, raw, "must be an integer") from None
            if value < 1:
                raise InvalidParameter(WORKERS_ENV, raw, "must be >= 1")
            return value
        return DEFAULT_WORKERS


def _set_dotted(target: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
    target[parts[-1]] = value


def build_config(data: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """辞書とフラグ上書きから設定を作る（キーは "trainer.seed" のようなドット区切り可）"""
    merged = copy.deepcopy(dict(data))
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(merged, key, value)
    try:
        return ExperimentConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"Invalid config ({where}): {first['msg']}") from None


def load_config(
    path: Union[str, Path, None],
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """YAML設定ファイルを読み込む"""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Config {path} is not valid YAML: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must be a mapping")
        manifest = data.get("manifest")
        if manifest and not Path(manifest).is_absolute():
            data["manifest"] = str(path.parent / manifest)

    config = build_config(data, overrides)
    logger.info(f"Loaded config {config.name}: method={config.method.value}, taxonomy={config.taxonomy.value}, seeds={config.seeds}")
    return config
