"""
Model-based RL over families of tasks.

``meta_train`` starts every task with one random-policy episode, then runs
passes: retrain the shared model on everything collected so far, then one
MPC trial on each unsolved task. ``meta_test`` does the same for new tasks
after a single-shot episode that only infers the task latent online.
``baseline_sgp_i`` gives every task its own latent-free model.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from tqdm.auto import tqdm

from ..envs import make_env
from ..envs.base import IntegrationConfig, SimulatedSystem
from ..errors import CheckpointCorruptError, ConfigError, TrajectoryError
from ..models.checkpoint import load_dataset, load_model, save_dataset, save_model
from ..models.data import MultiTaskDataset, Trajectory
from ..models.latent import TaskPosterior
from ..models.mlgp import FitConfig, InferenceConfig, MlgpModel, fit, infer_latent
from .dynamics import MlgpDynamics
from .mpc import MpcConfig, mpc_episode

logger = logging.getLogger(__name__)

MODEL_KINDS = ("mlgp", "sgp-ml")
STATE_FILE = "state.json"


@dataclass(frozen=True)
class TaskSpec:
    env_kind: str
    mass: float
    length: float
    task_id: str = ""

    def __post_init__(self) -> None:
        if not (self.mass > 0 and self.length > 0):
            raise ConfigError(f"task parameters must be positive, got m={self.mass}, l={self.length}")
        if not self.task_id:
            object.__setattr__(self, "task_id", f"{self.env_kind}-m{self.mass:g}-l{self.length:g}")

    @classmethod
    def grid(cls, env_kind: str, masses: Iterable[float], lengths: Iterable[float]) -> list["TaskSpec"]:
        lengths = list(lengths)
        return [cls(env_kind, float(mass), float(length)) for mass in masses for length in lengths]

    def make_env(self, integration: IntegrationConfig = IntegrationConfig()) -> SimulatedSystem:
        return make_env(self.env_kind, self.mass, self.length, integration)


@dataclass(frozen=True)
class RlConfig:
    model_kind: str = "mlgp"
    latent_dim: int = 2
    inducing_points: int = 100
    train_steps: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-2
    inference_steps: int = 50
    inference_learning_rate: float = 0.05
    episode_steps: int = 30
    max_trials: int = 15
    solved_window: int = 10
    success_threshold: Optional[float] = None
    online_latent: bool = True
    mpc: MpcConfig = MpcConfig()
    integration: IntegrationConfig = IntegrationConfig()
    progress: bool = False

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.episode_steps < self.solved_window:
            raise ConfigError("episodes must be at least as long as the solved window")
        if self.max_trials < 0 or self.latent_dim < 0 or self.inducing_points < 1:
            raise ConfigError("max_trials and latent_dim must be >= 0, inducing_points >= 1")

    @property
    def effective_latent_dim(self) -> int:
        return self.latent_dim if self.model_kind == "mlgp" else 0

    @property
    def episode_seconds(self) -> float:
        return self.episode_steps * self.integration.dt


@dataclass(frozen=True)
class TrialRecord:
    phase: str
    task_id: str
    trial: int
    solved: bool
    final_tip_distance: float
    interaction_seconds: float


@dataclass
class ExperimentState:
    """Everything a run of passes needs to continue after an interruption."""

    phase: str
    tasks: list[TaskSpec]
    dataset: MultiTaskDataset
    model: Optional[MlgpModel] = None
    solved: dict[str, bool] = field(default_factory=dict)
    trials: dict[str, int] = field(default_factory=dict)
    episodes: dict[str, int] = field(default_factory=dict)
    single_shot: dict[str, bool] = field(default_factory=dict)
    trial_log: list[TrialRecord] = field(default_factory=list)
    passes: int = 0
    complete: bool = False
    rng_state: Optional[dict] = None

    @classmethod
    def start(cls, phase: str, tasks: Sequence[TaskSpec], dataset: Optional[MultiTaskDataset] = None,
              model: Optional[MlgpModel] = None) -> "ExperimentState":
        ids = [task.task_id for task in tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"task ids repeat: {ids}")
        return cls(
            phase=phase,
            tasks=list(tasks),
            dataset=dataset.copy() if dataset is not None else MultiTaskDataset(),
            model=model,
            solved={task_id: False for task_id in ids},
            trials={task_id: 0 for task_id in ids},
            episodes={task_id: 0 for task_id in ids},
        )

    def pending(self, max_trials: int) -> list[TaskSpec]:
        return [
            task for task in self.tasks
            if not self.solved[task.task_id] and self.trials[task.task_id] < max_trials
        ]

    def interaction_seconds(self, task_id: str, config: RlConfig) -> float:
        return self.episodes[task_id] * config.episode_seconds


def task_rng(seed: int, task_id: str) -> np.random.Generator:
    """Stream owned by one task, independent of every other task's."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(task_id.encode("utf-8"))]))


def is_solved(
    env: SimulatedSystem,
    trajectory: Trajectory,
    window: int = 10,
    threshold: Optional[float] = None,
) -> bool:
    """Tip within ``threshold`` metres of the goal on each of the final ``window`` states."""
    if len(trajectory) < window:
        raise TrajectoryError(
            f"{trajectory.task_id}: {len(trajectory)} steps, solved check needs {window}"
        )
    limit = env.success_threshold if threshold is None else threshold
    distances = np.asarray(env.tip_distance(trajectory.states[-window:]))
    return bool(np.all(distances <= limit))


def open_loop_rollout(
    env: SimulatedSystem, controls: np.ndarray, rng: np.random.Generator, task_id: str
) -> Trajectory:
    """Apply a fixed T x K control sequence from a sampled initial state."""
    controls = env.clamp(np.asarray(controls, dtype=np.float64).reshape(-1, env.control_dim))
    state = env.sample_initial(rng)
    states = [state]
    for control in controls:
        state = env.step(state, control, rng)
        states.append(state)
    return Trajectory(task_id, np.vstack(states), controls)


def random_rollout(env: SimulatedSystem, steps: int, rng: np.random.Generator, task_id: str) -> Trajectory:
    """One episode of controls drawn uniformly over the bounds."""
    lower, upper = env.bounds
    return open_loop_rollout(env, rng.uniform(lower, upper, size=(steps, env.control_dim)), rng, task_id)


def train_model(state: ExperimentState, config: RlConfig, rng: np.random.Generator) -> MlgpModel:
    """Warm-started retrain on all of the dataset; standardization stays from the first fit."""
    if state.model is None:
        model = MlgpModel.initialize(
            state.dataset, config.effective_latent_dim, config.inducing_points, rng
        )
    else:
        model = state.model.copy()
        model.latents.ensure(state.dataset.task_ids)
    fit_config = FitConfig(
        steps=config.train_steps,
        batch_size=config.batch_size,
        seed=int(rng.integers(2**31 - 1)),
        learning_rate=config.learning_rate,
        progress=config.progress,
    )
    return fit(model, state.dataset, fit_config).model


class OnlineLatent:
    """Re-infers a task latent from the episode so far and hands back new dynamics."""

    def __init__(self, model: MlgpModel, task_id: str, config: RlConfig, seed: int) -> None:
        self.model = model
        self.task_id = task_id
        self.inference = InferenceConfig(config.inference_steps, config.inference_learning_rate, seed)
        self.posterior = TaskPosterior.prior(model.latent_dim)

    def __call__(self, trajectory: Trajectory) -> MlgpDynamics:
        self.posterior = infer_latent(
            self.model,
            MultiTaskDataset.from_trajectories([trajectory]),
            self.task_id,
            self.inference,
            initial=self.posterior,
        )
        return MlgpDynamics.for_posterior(self.model, self.posterior)


def _record(
    state: ExperimentState,
    task: TaskSpec,
    env: SimulatedSystem,
    trajectory: Trajectory,
    config: RlConfig,
) -> bool:
    task_id = task.task_id
    state.dataset.add(trajectory)
    state.episodes[task_id] += 1
    solved = is_solved(env, trajectory, config.solved_window, config.success_threshold)
    state.solved[task_id] = state.solved[task_id] or solved
    state.trial_log.append(
        TrialRecord(
            phase=state.phase,
            task_id=task_id,
            trial=state.trials[task_id],
            solved=solved,
            final_tip_distance=float(env.tip_distance(trajectory.states[-1])),
            interaction_seconds=state.interaction_seconds(task_id, config),
        )
    )
    return solved


def _dynamics_for(state: ExperimentState, task_id: str) -> MlgpDynamics:
    model = state.model
    posterior = model.latents.get(task_id) if model.latent_dim and task_id in model.latents else None
    return MlgpDynamics.for_posterior(model, posterior)


def _run_passes(
    state: ExperimentState,
    config: RlConfig,
    rng: np.random.Generator,
    checkpoint_dir: Optional[Path],
) -> None:
    while True:
        pending = state.pending(config.max_trials)
        if not pending:
            return
        state.model = train_model(state, config, rng)
        for task in tqdm(pending, desc=f"{state.phase} pass {state.passes + 1}",
                         disable=not config.progress, leave=False):
            env = task.make_env(config.integration)
            state.trials[task.task_id] += 1
            episode = mpc_episode(
                env, _dynamics_for(state, task.task_id), config.episode_steps, config.mpc, rng, task.task_id
            )
            _record(state, task, env, episode.trajectory, config)
        state.passes += 1
        solved = sum(state.solved.values())
        logger.info("%s pass %d: %d/%d tasks solved", state.phase, state.passes, solved, len(state.tasks))
        checkpoint(state, rng, checkpoint_dir)


def meta_train(
    tasks: Sequence[TaskSpec],
    config: RlConfig,
    rng: np.random.Generator,
    checkpoint_dir: Optional[str | Path] = None,
    resume: Optional[ExperimentState] = None,
    phase: str = "train",
) -> ExperimentState:
    """Random rollouts, then retrain/trial passes until every task is solved or out of trials."""
    directory = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if resume is not None:
        state = resume
    else:
        if not tasks:
            raise ConfigError("meta-training needs at least one task")
        state = ExperimentState.start(phase, tasks)
        for task in tasks:
            env = task.make_env(config.integration)
            _record(state, task, env, random_rollout(env, config.episode_steps, rng, task.task_id), config)
        checkpoint(state, rng, directory)
    if not state.complete:
        _run_passes(state, config, rng, directory)
        state.model = train_model(state, config, rng)
        state.complete = True
        checkpoint(state, rng, directory)
    return state


def meta_test(
    trained: ExperimentState,
    tasks: Sequence[TaskSpec],
    config: RlConfig,
    rng: np.random.Generator,
    checkpoint_dir: Optional[str | Path] = None,
    resume: Optional[ExperimentState] = None,
) -> ExperimentState:
    """Single-shot episode per new task with online latent inference, then few-shot passes."""
    directory = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if resume is not None:
        state = resume
    else:
        if trained.model is None:
            raise ConfigError("meta-testing needs a trained model")
        state = ExperimentState.start("test", tasks, trained.dataset, trained.model)
        for task in tasks:
            env = task.make_env(config.integration)
            model = state.model
            on_step = None
            if model.latent_dim and config.online_latent:
                on_step = OnlineLatent(model, task.task_id, config, int(rng.integers(2**31 - 1)))
            state.trials[task.task_id] += 1
            episode = mpc_episode(
                env, MlgpDynamics(model), config.episode_steps, config.mpc, rng, task.task_id, on_step
            )
            state.single_shot[task.task_id] = _record(state, task, env, episode.trajectory, config)
        checkpoint(state, rng, directory)
    if not state.complete:
        _run_passes(state, config, rng, directory)
        state.complete = True
        checkpoint(state, rng, directory)
    return state


@dataclass
class BaselineResult:
    """Independent per-task runs plus the cross-task single-shot matrix."""

    runs: dict[str, ExperimentState]
    single_shot: dict[tuple[str, str], bool]

    @property
    def single_shot_rate(self) -> float:
        return float(np.mean(list(self.single_shot.values()))) if self.single_shot else 0.0


def baseline_sgp_i(
    train_tasks: Sequence[TaskSpec],
    test_tasks: Sequence[TaskSpec],
    config: RlConfig,
    seed: int,
) -> BaselineResult:
    """One latent-free model per task; single-shot is each training model tried on each test task."""
    independent = replace(config, model_kind="sgp-ml")
    runs: dict[str, ExperimentState] = {}
    for task in list(train_tasks) + list(test_tasks):
        phase = "train" if task in train_tasks else "test"
        runs[task.task_id] = meta_train([task], independent, task_rng(seed, task.task_id), phase=phase)
    single_shot: dict[tuple[str, str], bool] = {}
    for source in train_tasks:
        model = runs[source.task_id].model
        for target in test_tasks:
            rng = task_rng(seed, f"{source.task_id}->{target.task_id}")
            env = target.make_env(config.integration)
            episode = mpc_episode(env, MlgpDynamics(model), config.episode_steps, config.mpc, rng, target.task_id)
            single_shot[(source.task_id, target.task_id)] = is_solved(
                env, episode.trajectory, config.solved_window, config.success_threshold
            )
    return BaselineResult(runs, single_shot)


def success_curve(records: Iterable[TrialRecord], task_ids: Sequence[str], max_trials: int) -> list[float]:
    """Fraction of tasks solved at or before each trial index 0..max_trials."""
    first: dict[str, int] = {}
    for record in records:
        if record.solved and record.task_id in task_ids:
            first[record.task_id] = min(first.get(record.task_id, record.trial), record.trial)
    if not task_ids:
        return [0.0] * (max_trials + 1)
    return [
        sum(1 for task_id in task_ids if first.get(task_id, max_trials + 1) <= trial) / len(task_ids)
        for trial in range(max_trials + 1)
    ]


# -- experiment-state checkpoints --------------------------------------------------


def checkpoint(state: ExperimentState, rng: np.random.Generator, directory: Optional[Path]) -> None:
    state.rng_state = rng.bit_generator.state
    if directory is not None:
        save_state(directory, state)


def save_state(directory: str | Path, state: ExperimentState) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_dataset(directory / "dataset.parquet", state.dataset)
    if state.model is not None:
        save_model(directory / "model.parquet", state.model)
    payload = {
        "phase": state.phase,
        "tasks": [asdict(task) for task in state.tasks],
        "solved": state.solved,
        "trials": state.trials,
        "episodes": state.episodes,
        "single_shot": state.single_shot,
        "trial_log": [asdict(record) for record in state.trial_log],
        "passes": state.passes,
        "complete": state.complete,
        "has_model": state.model is not None,
        "rng_state": state.rng_state,
    }
    (directory / STATE_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_state(directory: str | Path) -> ExperimentState:
    directory = Path(directory)
    try:
        payload = json.loads((directory / STATE_FILE).read_text(encoding="utf-8"))
        return ExperimentState(
            phase=payload["phase"],
            tasks=[TaskSpec(**task) for task in payload["tasks"]],
            dataset=load_dataset(directory / "dataset.parquet"),
            model=load_model(directory / "model.parquet") if payload["has_model"] else None,
            solved=payload["solved"],
            trials=payload["trials"],
            episodes=payload["episodes"],
            single_shot=payload["single_shot"],
            trial_log=[TrialRecord(**record) for record in payload["trial_log"]],
            passes=payload["passes"],
            complete=payload["complete"],
            rng_state=payload["rng_state"],
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"{directory / STATE_FILE}: {exc}") from exc


def restore_rng(state: ExperimentState) -> np.random.Generator:
    rng = np.random.default_rng()
    if state.rng_state is None:
        raise CheckpointCorruptError("experiment state carries no rng state")
    rng.bit_generator.state = state.rng_state
    return rng
