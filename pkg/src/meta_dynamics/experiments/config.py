"""
Experiment configuration: YAML validated into frozen dataclasses.

Every section is a dataclass; unknown keys, wrong types and out-of-range
values raise ``ConfigError`` before any compute starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from ..control.metarl import RlConfig, TaskSpec
from ..control.mpc import MpcConfig
from ..envs import ENV_KINDS
from ..envs.base import IntegrationConfig
from ..errors import ConfigError
from . import DEFAULT_CONFIG_PATH


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class ModelSection:
    latent_dim: int = 2
    inducing_points: int = 100
    train_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-2
    inference_steps: int = 100
    inference_learning_rate: float = 0.05

    def __post_init__(self) -> None:
        _require(self.latent_dim >= 0, "model.latent_dim must be >= 0")
        _require(self.inducing_points >= 1, "model.inducing_points must be >= 1")
        _require(self.train_steps >= 0 and self.inference_steps >= 0, "model step counts must be >= 0")
        _require(self.batch_size >= 1, "model.batch_size must be >= 1")
        _require(self.learning_rate > 0 and self.inference_learning_rate > 0, "learning rates must be > 0")


@dataclass(frozen=True)
class TaskGrid:
    env: str = "cartpole"
    train_masses: tuple[float, ...] = (0.4, 0.6, 0.8)
    train_lengths: tuple[float, ...] = (0.5, 0.7)
    test_pairs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        _require(self.env in ENV_KINDS, f"env must be one of {ENV_KINDS}, got {self.env!r}")
        _require(bool(self.train_masses) and bool(self.train_lengths), "training grid must be non-empty")
        _require(all(len(pair) == 2 for pair in self.test_pairs), "test_pairs entries are [mass, length]")

    def train_tasks(self) -> list[TaskSpec]:
        return TaskSpec.grid(self.env, self.train_masses, self.train_lengths)

    def test_tasks(self) -> list[TaskSpec]:
        return [TaskSpec(self.env, float(mass), float(length)) for mass, length in self.test_pairs]


@dataclass(frozen=True)
class ModelQualitySection:
    tasks: TaskGrid = TaskGrid()
    trajectory_steps: int = 100
    observed_steps: int = 10
    inducing_points: tuple[int, ...] = (10, 30, 50, 100)
    latent_samples: int = 10
    exact_gp: bool = True
    exact_gp_max_points: int = 600
    exact_gp_steps: int = 300

    def __post_init__(self) -> None:
        _require(0 < self.observed_steps < self.trajectory_steps, "need 0 < observed_steps < trajectory_steps")
        _require(all(m >= 1 for m in self.inducing_points), "inducing_points entries must be >= 1")
        _require(self.latent_samples >= 1, "latent_samples must be >= 1")


@dataclass(frozen=True)
class EmbeddingSection:
    tasks: TaskGrid = TaskGrid(train_lengths=(0.4, 0.5, 0.6, 0.7))
    trajectory_steps: int = 100
    observed_steps: int = 10

    def __post_init__(self) -> None:
        _require(0 < self.observed_steps <= self.trajectory_steps, "need 0 < observed_steps <= trajectory_steps")


@dataclass(frozen=True)
class RlSection:
    tasks: TaskGrid = TaskGrid(train_masses=(0.4, 0.8), train_lengths=(0.6, 0.8))
    model_kind: str = "mlgp"
    baselines: tuple[str, ...] = ("sgp-ml", "sgp-i")
    episode_steps: int = 30
    max_trials: int = 15
    solved_window: int = 10
    success_threshold: Optional[float] = None
    online_latent: bool = True
    checkpoints: bool = True

    def __post_init__(self) -> None:
        _require(self.model_kind in ("mlgp", "sgp-ml"), f"rl.model_kind must be mlgp or sgp-ml, got {self.model_kind!r}")
        unknown = set(self.baselines) - {"sgp-ml", "sgp-i"}
        _require(not unknown, f"unknown rl baselines {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    workers: int = 1
    progress: bool = False
    out_dir: Optional[str] = None
    model: ModelSection = ModelSection()
    integration: IntegrationConfig = IntegrationConfig()
    mpc: MpcConfig = MpcConfig()
    model_quality: ModelQualitySection = ModelQualitySection()
    embedding: EmbeddingSection = EmbeddingSection()
    rl: RlSection = RlSection()

    def __post_init__(self) -> None:
        _require(bool(self.seeds), "at least one seed is required")
        _require(len(set(self.seeds)) == len(self.seeds), "seeds must be distinct")
        _require(self.workers >= 1, "workers must be >= 1")

    def rl_config(self, model_kind: Optional[str] = None) -> RlConfig:
        return RlConfig(
            model_kind=model_kind or self.rl.model_kind,
            latent_dim=self.model.latent_dim,
            inducing_points=self.model.inducing_points,
            train_steps=self.model.train_steps,
            batch_size=self.model.batch_size,
            learning_rate=self.model.learning_rate,
            inference_steps=self.model.inference_steps,
            inference_learning_rate=self.model.inference_learning_rate,
            episode_steps=self.rl.episode_steps,
            max_trials=self.rl.max_trials,
            solved_window=self.rl.solved_window,
            success_threshold=self.rl.success_threshold,
            online_latent=self.rl.online_latent,
            mpc=self.mpc,
            integration=self.integration,
            progress=self.progress,
        )


def _coerce(value: Any, hint: Any, where: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        (inner,) = [arg for arg in args if arg is not type(None)]
        return _coerce(value, inner, where)
    if dataclasses.is_dataclass(hint):
        return build(hint, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(item, args[0], f"{where}[{i}]") for i, item in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(item, arg, f"{where}[{i}]") for i, (item, arg) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {hint!r}")


def build(cls: type, data: Any, where: str = "config") -> Any:
    """Instantiate dataclass ``cls`` from a mapping, recursively, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    values = {name: _coerce(value, hints[name], f"{where}.{name}") for name, value in data.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    source = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        with source.open("r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source} is not valid YAML: {exc}") from exc
    return build(ExperimentConfig, data)


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    changes: dict[str, Any] = {}
    if seed is not None:
        changes["seeds"] = (seed,)
    if out_dir is not None:
        changes["out_dir"] = str(out_dir)
    if workers is not None:
        changes["workers"] = workers
    return replace(config, **changes) if changes else config


EXECUTION_KEYS = ("out_dir", "workers", "progress")


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, compact separators).

    Keys that only change where or how fast a run happens are left out.
    """
    content = {key: value for key, value in dataclasses.asdict(config).items() if key not in EXECUTION_KEYS}
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
