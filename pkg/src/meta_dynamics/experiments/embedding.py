"""Latent embeddings of the training systems and of a few held-out ones."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from ..errors import ConfigError
from ..models.data import MultiTaskDataset
from ..models.latent import TaskPosterior
from ..models.mlgp import FitConfig, InferenceConfig, MlgpModel, fit, infer_latent
from .config import ExperimentConfig, config_hash
from .model_quality import excited_trajectories
from .results import mean_and_se, sources_for, write_json, write_table
from .runner import map_seeds

logger = logging.getLogger(__name__)

EXPERIMENT_ID = "embedding"
PROPERTIES = ("mass", "length")


def embedding_rows(
    seed: int, split: str, tasks: list, posteriors: list[TaskPosterior]
) -> list[dict[str, object]]:
    rows = []
    for task, posterior in zip(tasks, posteriors):
        row: dict[str, object] = {
            "seed": seed,
            "split": split,
            "task_id": task.task_id,
            "mass": task.mass,
            "length": task.length,
        }
        for i, (mean, std) in enumerate(zip(posterior.mean, posterior.std)):
            row[f"mean_{i}"] = float(mean)
            row[f"std_{i}"] = float(std)
        rows.append(row)
    return rows


def projection_correlation(means: np.ndarray, values: np.ndarray) -> float:
    """Spearman rank correlation between ``values`` and their best linear fit from the latent means.

    The latent axes carry no fixed orientation, so a least-squares projection
    is compared rather than any single coordinate.
    """
    if np.ptp(values) == 0.0:
        return float("nan")
    design = np.hstack([means, np.ones((means.shape[0], 1))])
    weights, *_ = np.linalg.lstsq(design, values, rcond=None)
    rho = spearmanr(design @ weights, values).statistic
    return float(rho)


def run_seed(config: ExperimentConfig, seed: int) -> list[dict[str, object]]:
    section = config.embedding
    rng = np.random.default_rng(seed)
    train_tasks = section.tasks.train_tasks()
    test_tasks = section.tasks.test_tasks()
    train = MultiTaskDataset.from_trajectories(
        excited_trajectories(train_tasks, section.trajectory_steps, config, rng)
    )
    model = MlgpModel.initialize(train, config.model.latent_dim, config.model.inducing_points, rng)
    fitted = fit(
        model,
        train,
        FitConfig(
            steps=config.model.train_steps,
            batch_size=config.model.batch_size,
            seed=int(rng.integers(2**31 - 1)),
            learning_rate=config.model.learning_rate,
        ),
    ).model
    rows = embedding_rows(seed, "train", train_tasks, [fitted.latents.get(t.task_id) for t in train_tasks])

    held_out = MultiTaskDataset.from_trajectories(
        trajectory.head(section.observed_steps)
        for trajectory in excited_trajectories(test_tasks, section.trajectory_steps, config, rng)
    )
    inference = InferenceConfig(
        config.model.inference_steps, config.model.inference_learning_rate, int(rng.integers(2**31 - 1))
    )
    posteriors = [infer_latent(fitted, held_out, task.task_id, inference) for task in test_tasks]
    rows.extend(embedding_rows(seed, "test", test_tasks, posteriors))
    logger.info("seed %d: embedded %d training and %d test systems", seed, len(train_tasks), len(test_tasks))
    return rows


def correlations(frame: pd.DataFrame, latent_dim: int) -> dict[str, dict[str, float]]:
    """Per-property correlation over seeds, training systems only."""
    columns = [f"mean_{i}" for i in range(latent_dim)]
    summary = {}
    for prop in PROPERTIES:
        per_seed = []
        for _, group in frame[frame["split"] == "train"].groupby("seed", sort=True):
            rho = projection_correlation(group[columns].to_numpy(), group[prop].to_numpy(dtype=np.float64))
            if not np.isnan(rho):
                per_seed.append(rho)
        summary[prop] = mean_and_se(per_seed)
    return summary


def run(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    if config.model.latent_dim < 1:
        raise ConfigError("the embedding experiment needs model.latent_dim >= 1")
    results = map_seeds(run_seed, config, EXPERIMENT_ID)
    frame = pd.DataFrame([row for _, rows in results for row in rows])
    digest = config_hash(config)
    source = sources_for(EXPERIMENT_ID, digest, config.seeds)
    return [
        write_table(out_dir / "embeddings.csv", frame, source),
        write_json(
            out_dir / "summary.json",
            {"config_hash": digest, "spearman": correlations(frame, config.model.latent_dim)},
            source,
        ),
    ]
