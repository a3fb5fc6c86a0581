"""Per-task latent variables h_p with N(0, I) prior and diagonal Gaussian posteriors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .. import autodiff as ad
from ..errors import DuplicateTaskError, ShapeError, UnknownTaskError


@dataclass(frozen=True)
class TaskPosterior:
    """q(h_p) for a single task: mean n_p and standard deviations σ_p."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def prior(cls, latent_dim: int) -> "TaskPosterior":
        return cls(np.zeros(latent_dim), np.ones(latent_dim))

    @property
    def latent_dim(self) -> int:
        return int(self.mean.shape[0])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.latent_dim)


@dataclass
class LatentPosterior:
    """Rows of (n_p, log σ_p), one per registered task, in registration order."""

    latent_dim: int
    task_ids: list[str] = field(default_factory=list)
    means: Optional[np.ndarray] = None
    log_stds: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.means is None:
            self.means = np.zeros((len(self.task_ids), self.latent_dim))
        if self.log_stds is None:
            self.log_stds = np.zeros((len(self.task_ids), self.latent_dim))
        expected = (len(self.task_ids), self.latent_dim)
        if self.means.shape != expected or self.log_stds.shape != expected:
            raise ShapeError(
                f"latent arrays {self.means.shape}/{self.log_stds.shape}, expected {expected}"
            )
        if len(set(self.task_ids)) != len(self.task_ids):
            raise DuplicateTaskError("latent posterior lists a task twice")

    def __contains__(self, task_id: str) -> bool:
        return task_id in self.task_ids

    def __len__(self) -> int:
        return len(self.task_ids)

    def copy(self) -> "LatentPosterior":
        return LatentPosterior(
            self.latent_dim, list(self.task_ids), self.means.copy(), self.log_stds.copy()
        )

    def index(self, task_id: str) -> int:
        try:
            return self.task_ids.index(task_id)
        except ValueError:
            raise UnknownTaskError(f"task {task_id!r} has no latent posterior") from None

    def register(self, task_id: str) -> TaskPosterior:
        """Add a task with the prior-matched posterior N(0, I)."""
        if task_id in self.task_ids:
            raise DuplicateTaskError(f"task {task_id!r} is already registered")
        self.task_ids.append(task_id)
        self.means = np.vstack([self.means, np.zeros((1, self.latent_dim))])
        self.log_stds = np.vstack([self.log_stds, np.zeros((1, self.latent_dim))])
        return self.get(task_id)

    def ensure(self, task_ids: Iterable[str]) -> None:
        for task_id in task_ids:
            if task_id not in self.task_ids:
                self.register(task_id)

    def get(self, task_id: str) -> TaskPosterior:
        row = self.index(task_id)
        return TaskPosterior(self.means[row].copy(), np.exp(self.log_stds[row]))

    def set(self, task_id: str, posterior: TaskPosterior) -> None:
        row = self.index(task_id)
        self.means[row] = posterior.mean
        self.log_stds[row] = np.log(posterior.std)

    def sample(self, task_id: str, rng: np.random.Generator) -> np.ndarray:
        """Reparameterised draw n_p + σ_p ⊙ ε."""
        return self.get(task_id).sample(rng)


def sample_node(mean_row: ad.Node, log_std_row: ad.Node, noise: np.ndarray) -> ad.Node:
    """n_p + exp(log σ_p) ⊙ ε on the tape, differentiable in both parameters."""
    return mean_row + ad.exp(log_std_row) * np.reshape(noise, mean_row.shape)


def kl_latent_node(means: ad.Node, log_stds: ad.Node) -> ad.Node:
    """Σ_p Σ_q ½(σ² + n² − 1 − log σ²) against the N(0, I) prior."""
    variances = ad.exp(2.0 * log_stds)
    return 0.5 * ad.sum_(variances + ad.square(means) - 1.0 - 2.0 * log_stds)


def kl_latent(posteriors: LatentPosterior) -> float:
    if len(posteriors) == 0 or posteriors.latent_dim == 0:
        return 0.0
    variances = np.exp(2.0 * posteriors.log_stds)
    return float(
        0.5 * np.sum(variances + posteriors.means**2 - 1.0 - 2.0 * posteriors.log_stds)
    )
