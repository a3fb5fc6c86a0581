"""Toy regression family: one shared function, a constant offset per task."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..models.data import MultiTaskDataset, TaskData

DOMAIN = (-2.0, 2.0)
TRAIN_OFFSETS = tuple(float(value) for value in np.linspace(-1.5, 1.5, 6))
TEST_OFFSETS = (-1.2, -0.4, 0.7, 1.3)
NOISE_STD = 0.05


def toy_function(x: np.ndarray) -> np.ndarray:
    """g(x) = sin(2x) + x/2, shared by every task."""
    return np.sin(2.0 * x) + 0.5 * x


@dataclass(frozen=True)
class ToyFamily:
    train: MultiTaskDataset
    test: MultiTaskDataset
    offsets: dict[str, float]


def toy_block(task_id: str, x: np.ndarray, offset: float, noise_std: float, rng: np.random.Generator) -> TaskData:
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    y = toy_function(x) + offset
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(y.shape)
    return TaskData(task_id, x, np.zeros((x.shape[0], 0)), y)


def toy_family(
    task_count: int,
    rng: np.random.Generator,
    offsets: Optional[Sequence[float]] = None,
    train_points: int = 20,
    test_points: int = 50,
    noise_std: float = NOISE_STD,
    prefix: str = "toy",
) -> ToyFamily:
    """Per task: ``train_points`` noisy samples and ``test_points`` held-out samples.

    Without explicit ``offsets`` the tasks are spread evenly over [-1.5, 1.5].
    """
    if offsets is None:
        offsets = np.linspace(-1.5, 1.5, task_count)
    if len(offsets) != task_count:
        raise ValueError(f"{task_count} tasks but {len(offsets)} offsets")
    train, test = MultiTaskDataset(), MultiTaskDataset()
    table: dict[str, float] = {}
    for index, offset in enumerate(offsets):
        task_id = f"{prefix}-{index}"
        table[task_id] = float(offset)
        train.add(toy_block(task_id, rng.uniform(*DOMAIN, size=train_points), offset, noise_std, rng))
        test.add(toy_block(task_id, rng.uniform(*DOMAIN, size=test_points), offset, noise_std, rng))
    return ToyFamily(train, test, table)
