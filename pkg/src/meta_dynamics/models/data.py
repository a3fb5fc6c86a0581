"""Trajectories, per-task regression blocks and standardization statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from ..errors import NonFiniteError, ShapeError, TrajectoryError

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Trajectory:
    """One episode on one task: T+1 states and the T controls between them.

    Storing the states as a single array makes record t's next state the
    same row as record t+1's state, so the chain holds by construction.
    """

    task_id: str
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        controls = np.asarray(self.controls, dtype=np.float64)
        if states.ndim != 2 or controls.ndim != 2:
            raise ShapeError("trajectory states and controls must be 2-D")
        if states.shape[0] != controls.shape[0] + 1:
            raise TrajectoryError(
                f"{self.task_id}: {states.shape[0]} states for {controls.shape[0]} controls"
            )
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
            raise NonFiniteError(f"{self.task_id}: trajectory contains NaN or Inf")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @classmethod
    def from_records(
        cls,
        task_id: str,
        records: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
        atol: float = 0.0,
    ) -> "Trajectory":
        """Build from (x_t, c_t, x_{t+1}) records, checking that they chain."""
        if not records:
            raise TrajectoryError(f"{task_id}: no records")
        states = [np.asarray(records[0][0], dtype=np.float64)]
        controls = []
        for index, (state, control, next_state) in enumerate(records):
            if not np.allclose(state, states[-1], rtol=0.0, atol=atol):
                raise TrajectoryError(f"{task_id}: record {index} does not continue record {index - 1}")
            controls.append(np.atleast_1d(np.asarray(control, dtype=np.float64)))
            states.append(np.asarray(next_state, dtype=np.float64))
        return cls(task_id, np.vstack(states), np.vstack(controls))

    def __len__(self) -> int:
        return int(self.controls.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def control_dim(self) -> int:
        return int(self.controls.shape[1])

    def records(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        for t in range(len(self)):
            yield self.states[t], self.controls[t], self.states[t + 1]

    def head(self, transitions: int) -> "Trajectory":
        return Trajectory(self.task_id, self.states[: transitions + 1], self.controls[:transitions])

    def to_task_data(self) -> "TaskData":
        return TaskData(
            self.task_id,
            self.states[:-1],
            self.controls,
            np.diff(self.states, axis=0),
        )


@dataclass(frozen=True)
class TaskData:
    """Regression block for one task: inputs (states, controls) and targets.

    For dynamics the targets are y_t = x_{t+1} - x_t; the toy family uses
    the same layout with no controls.
    """

    task_id: str
    states: np.ndarray
    controls: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        arrays = [np.asarray(a, dtype=np.float64) for a in (self.states, self.controls, self.targets)]
        rows = {a.shape[0] for a in arrays}
        if any(a.ndim != 2 for a in arrays) or len(rows) != 1:
            raise ShapeError(
                f"{self.task_id}: inconsistent block shapes {[a.shape for a in arrays]}"
            )
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NonFiniteError(f"{self.task_id}: block contains NaN or Inf")
        for name, array in zip(("states", "controls", "targets"), arrays):
            object.__setattr__(self, name, array)

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def head(self, rows: int) -> "TaskData":
        return TaskData(self.task_id, self.states[:rows], self.controls[:rows], self.targets[:rows])


@dataclass
class MultiTaskDataset:
    """Blocks grouped by task id, in the order they were added.

    Each block is one trajectory (or one toy task's sample) and is the unit
    drawn when minibatching.
    """

    blocks: list[TaskData] = field(default_factory=list)

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory]) -> "MultiTaskDataset":
        dataset = cls()
        for trajectory in trajectories:
            dataset.add(trajectory)
        return dataset

    def add(self, item: Trajectory | TaskData) -> None:
        block = item.to_task_data() if isinstance(item, Trajectory) else item
        if self.blocks:
            first = self.blocks[0]
            if (block.states.shape[1], block.controls.shape[1]) != (
                first.states.shape[1],
                first.controls.shape[1],
            ):
                raise ShapeError(f"{block.task_id}: block dimensions differ from the dataset")
        self.blocks.append(block)

    def copy(self) -> "MultiTaskDataset":
        return MultiTaskDataset(list(self.blocks))

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def task_ids(self) -> list[str]:
        return list(dict.fromkeys(block.task_id for block in self.blocks))

    @property
    def transition_count(self) -> int:
        return sum(len(block) for block in self.blocks)

    @property
    def state_dim(self) -> int:
        return int(self.blocks[0].states.shape[1])

    @property
    def control_dim(self) -> int:
        return int(self.blocks[0].controls.shape[1])

    def for_tasks(self, task_ids: Iterable[str]) -> "MultiTaskDataset":
        wanted = set(task_ids)
        return MultiTaskDataset([block for block in self.blocks if block.task_id in wanted])

    def fragment(self, task_id: str, transitions: int) -> "MultiTaskDataset":
        """The first ``transitions`` observations of a task, in collection order."""
        remaining = transitions
        kept: list[TaskData] = []
        for block in self.blocks:
            if block.task_id != task_id or remaining <= 0:
                continue
            taken = block.head(min(len(block), remaining))
            kept.append(taken)
            remaining -= len(taken)
        return MultiTaskDataset(kept)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension affine maps fitted on the training split.

    Targets are scaled but never centred, so a zero-mean GP still predicts
    "no change" after de-standardization.
    """

    state_mean: np.ndarray
    state_std: np.ndarray
    control_mean: np.ndarray
    control_std: np.ndarray
    target_std: np.ndarray

    @classmethod
    def fit(cls, blocks: Sequence[TaskData]) -> "Standardizer":
        if not blocks:
            raise ShapeError("cannot standardize an empty dataset")
        states = np.vstack([block.states for block in blocks])
        controls = np.vstack([block.controls for block in blocks])
        targets = np.vstack([block.targets for block in blocks])
        return cls(
            state_mean=states.mean(axis=0),
            state_std=np.maximum(states.std(axis=0), STD_FLOOR),
            control_mean=controls.mean(axis=0),
            control_std=np.maximum(controls.std(axis=0), STD_FLOOR),
            target_std=np.maximum(np.sqrt(np.mean(targets**2, axis=0)), STD_FLOOR),
        )

    @classmethod
    def identity(cls, state_dim: int, control_dim: int) -> "Standardizer":
        return cls(
            np.zeros(state_dim), np.ones(state_dim),
            np.zeros(control_dim), np.ones(control_dim),
            np.ones(state_dim),
        )

    @property
    def target_mean(self) -> np.ndarray:
        return np.zeros_like(self.target_std)

    def states(self, states: np.ndarray) -> np.ndarray:
        return (states - self.state_mean) / self.state_std

    def controls(self, controls: np.ndarray) -> np.ndarray:
        return (controls - self.control_mean) / self.control_std

    def targets(self, targets: np.ndarray) -> np.ndarray:
        return targets / self.target_std

    def restore_targets(self, targets: np.ndarray) -> np.ndarray:
        return targets * self.target_std

    def block(self, block: TaskData) -> TaskData:
        return TaskData(
            block.task_id,
            self.states(block.states),
            self.controls(block.controls),
            self.targets(block.targets),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "state_mean": self.state_mean,
            "state_std": self.state_std,
            "control_mean": self.control_mean,
            "control_std": self.control_std,
            "target_std": self.target_std,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: Optional[str] = None) -> "Standardizer":
        key = (lambda name: f"{prefix}{name}") if prefix else (lambda name: name)
        return cls(**{name: np.asarray(arrays[key(name)]).ravel() for name in (
            "state_mean", "state_std", "control_mean", "control_std", "target_std"
        )})
