"""Pipeline configuration: one structured JSON file drives every command."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .objectives import DPOConfig, KTOConfig
from .tinylm import LMConfig
from .trainer import TrainConfig

DEFAULT_TASK_INSTRUCTION = "Answer the patient."
DEFAULT_BASELINE_INSTRUCTION = (
    "You are a compassionate doctor. Answer the patient's question with "
    "medical knowledge while comforting their negative emotions."
)

# Stage names map to (source dataset, objective). Plans are ordered stage lists.
STAGE_TABLE: dict[str, tuple[str, str]] = {
    "er_sft": ("er", "sft"),
    "eqsr_sft": ("eqsr", "sft"),
    "eqsr_dpo": ("eqsr", "dpo"),
    "eqsr_kto": ("eqsr", "kto"),
}

PLAN_TABLE: dict[str, tuple[str, ...]] = {
    "base": (),
    "prompt": (),
    "er_sft": ("er_sft",),
    "eqsr_sft": ("eqsr_sft",),
    "eqsr_dpo": ("eqsr_dpo",),
    "eqsr_kto": ("eqsr_kto",),
    "er_sft+eqsr_sft": ("er_sft", "eqsr_sft"),
    "er_sft+eqsr_dpo": ("er_sft", "eqsr_dpo"),
    "er_sft+eqsr_kto": ("er_sft", "eqsr_kto"),
}


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent configuration."""


@dataclass(frozen=True)
class RewriteSettings:
    backend: str = "mock"  # mock | network
    model: str = "default"
    seed: int = 0
    concurrency: int = 4
    max_retries: int = 2
    er_fraction: float = 6 / 11
    failure_threshold: float = 0.05
    temperature: float = 0.7

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "network"):
            raise ConfigError(f"rewrite backend must be 'mock' or 'network', got {self.backend!r}")
        if not 0 < self.er_fraction < 1:
            raise ConfigError("er_fraction must be in (0, 1)")


@dataclass(frozen=True)
class EvalSettings:
    judge_backend: str = "mock"  # mock | network
    judge_model: str = "default"
    judge_seed: int = 0
    max_questions: Optional[int] = None
    bleu_max_n: int = 4
    max_new_tokens: int = 120
    temperature: float = 0.0
    sample_seed: int = 0

    def __post_init__(self) -> None:
        if self.judge_backend not in ("mock", "network"):
            raise ConfigError(
                f"judge backend must be 'mock' or 'network', got {self.judge_backend!r}"
            )
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    raw_data: str
    work_dir: str
    seed: int = 0
    task_instruction: str = DEFAULT_TASK_INSTRUCTION
    baseline_instruction: str = DEFAULT_BASELINE_INSTRUCTION
    plans: tuple[str, ...] = tuple(PLAN_TABLE)
    model: LMConfig = field(default_factory=LMConfig)
    rewrite: RewriteSettings = field(default_factory=RewriteSettings)
    train: dict[str, TrainConfig] = field(default_factory=dict)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self) -> None:
        if not self.raw_data or not self.work_dir:
            raise ConfigError("raw_data and work_dir are required")
        for plan in self.plans:
            if plan not in PLAN_TABLE:
                raise ConfigError(f"unknown plan {plan!r}; valid plans: {', '.join(PLAN_TABLE)}")
        for key, cfg in self.train.items():
            expected = STAGE_TABLE[key][1] if key in STAGE_TABLE else key
            if expected not in ("sft", "dpo", "kto"):
                raise ConfigError(f"unknown train config key {key!r}")
            if cfg.method != expected:
                raise ConfigError(
                    f"train config {key!r} must use method {expected!r}, got {cfg.method!r}"
                )

    def stage_config(self, stage_name: str) -> TrainConfig:
        """Per-stage override if present, else the per-method config."""
        if stage_name in self.train:
            return self.train[stage_name]
        method = STAGE_TABLE[stage_name][1]
        if method in self.train:
            return self.train[method]
        return TrainConfig(method=method, seed=self.seed)

    def work_path(self, *parts: str) -> Path:
        return Path(self.work_dir).joinpath(*parts)


def _from_dict(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {context}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def _train_config_from_dict(data: dict, context: str) -> TrainConfig:
    data = dict(data)
    if "dpo" in data:
        data["dpo"] = _from_dict(DPOConfig, data["dpo"], f"{context}.dpo")
    if "kto" in data:
        data["kto"] = _from_dict(KTOConfig, data["kto"], f"{context}.kto")
    return _from_dict(TrainConfig, data, context)


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    data = dict(data)
    if "model" in data:
        data["model"] = _from_dict(LMConfig, data["model"], "model")
    if "rewrite" in data:
        data["rewrite"] = _from_dict(RewriteSettings, data["rewrite"], "rewrite")
    if "eval" in data:
        data["eval"] = _from_dict(EvalSettings, data["eval"], "eval")
    if "plans" in data:
        data["plans"] = tuple(data["plans"])
    if "train" in data:
        if not isinstance(data["train"], dict):
            raise ConfigError("train must be an object keyed by method or stage name")
        data["train"] = {
            key: _train_config_from_dict(value, f"train.{key}")
            for key, value in data["train"].items()
        }
    return _from_dict(PipelineConfig, data, "config")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(config: PipelineConfig) -> dict:
    data = asdict(config)
    data["plans"] = list(config.plans)
    return data


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
