"""Run configuration: every hyperparameter, with per-task defaults."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .model import ModelConfig
from .reviewer import ReviewerConfig
from .training import TrainConfig

TASKS = ("code", "caption")


@dataclass
class DataConfig:
    vocab_threshold: int = 5
    source_cap: int = 300
    target_cap: int = 300
    test_fraction: float = 0.1
    dev_fraction: float = 0.1
    beam: int = 3
    max_len: int = 300
    length_normalize: bool = False


@dataclass
class RunConfig:
    task: str = "code"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    @classmethod
    def defaults(cls, task: str = "code") -> "RunConfig":
        if task == "caption":
            return cls(
                task="caption",
                model=ModelConfig(encoder="features", embed_dim=100, hidden_dim=1024,
                                  reviewer=ReviewerConfig("attentive_input", 8, "tied", True)),
                train=TrainConfig(lam=10.0, lr=1e-2, early_stop_metric="bleu4", max_len=30),
                data=DataConfig(vocab_threshold=5, source_cap=30, target_cap=30, max_len=30),
            )
        if task == "code":
            return cls(
                task="code",
                model=ModelConfig(encoder="rnn", embed_dim=50, hidden_dim=256,
                                  reviewer=ReviewerConfig("attentive_output", 8, "tied", True)),
                train=TrainConfig(lam=10.0, lr=1e-2, early_stop_metric="nll", max_len=300),
                data=DataConfig(vocab_threshold=5, source_cap=300, target_cap=300, max_len=300),
            )
        raise ValueError(f"unknown task {task!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        """Overlay ``raw`` on the defaults for its task; unknown keys are errors."""
        if not isinstance(raw, dict):
            raise ValueError("config must be a JSON object")
        base = cls.defaults(raw.get("task", "code"))
        _overlay(base, raw, "config")
        # re-run validation on nested dataclasses
        for part in (base.model.reviewer, base.model, base.train):
            part.__post_init__()
        return base

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)


def _overlay(obj, raw: dict, where: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown key {where}.{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"{where}.{key} must be an object")
            _overlay(current, value, f"{where}.{key}")
        else:
            setattr(obj, key, value)
