"""
One-step prediction quality on held-out systems.

Every training and test system is driven by the same fixed excitation
signal. Test systems reveal their first ``observed_steps`` transitions;
the models then predict the rest one step ahead, and the latent models
re-infer q(h) after every revealed step. RMSE and NLL are in
standardized target units (training-split statistics).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from ..control.metarl import TaskSpec, open_loop_rollout
from ..models.data import MultiTaskDataset, Standardizer, TaskData, Trajectory
from ..models.exact_gp import ExactGpConfig, fit_exact_gp
from ..models.exact_gp import predict_delta as exact_predict_delta
from ..models.mlgp import FitConfig, InferenceConfig, MlgpModel, fit, infer_latent, predict_delta
from .config import ExperimentConfig, config_hash
from .results import ResultRecord, mean_and_se, sources_for, write_json, write_records, write_table
from .runner import map_seeds

logger = logging.getLogger(__name__)

EXPERIMENT_ID = "model-quality"
EXCITATION_SEED = 1_000_003
EXCITATION_WINDOW = 10
EXCITATION_GAIN = 0.8
LOG_2PI = math.log(2.0 * math.pi)


def excitation_controls(steps: int, control_dim: int, bound: float) -> np.ndarray:
    """The fixed evaluation signal: smoothed white noise at 80% of the control bound.

    Its seed never changes, so every run and every system sees the same sequence.
    """
    rng = np.random.default_rng(EXCITATION_SEED)
    raw = rng.standard_normal((steps + EXCITATION_WINDOW - 1, control_dim))
    window = np.ones(EXCITATION_WINDOW) / EXCITATION_WINDOW
    smooth = np.column_stack([np.convolve(raw[:, k], window, mode="valid") for k in range(control_dim)])
    return EXCITATION_GAIN * bound * smooth / np.max(np.abs(smooth), axis=0)


def excited_trajectories(
    tasks: list[TaskSpec], steps: int, config: ExperimentConfig, rng: np.random.Generator
) -> list[Trajectory]:
    trajectories = []
    for task in tasks:
        env = task.make_env(config.integration)
        controls = excitation_controls(steps, env.control_dim, env.control_bound)
        trajectories.append(open_loop_rollout(env, controls, rng, task.task_id))
    return trajectories


@dataclass(frozen=True)
class Scores:
    rmse: float
    nll: float


def score_predictions(
    means: np.ndarray, variances: np.ndarray, targets: np.ndarray, standardizer: Standardizer
) -> Scores:
    """Scores of an equal-weight Gaussian mixture (S x N x D components) in standardized units.

    NLL is per transition, summed over output dimensions.
    """
    scale = standardizer.target_std
    residuals = (targets[None] - means) / scale
    scaled_var = variances / scale**2
    log_density = -0.5 * np.sum(LOG_2PI + np.log(scaled_var) + residuals**2 / scaled_var, axis=2)
    mixture = logsumexp(log_density, axis=0) - math.log(means.shape[0])
    mixture_mean = (targets - means.mean(axis=0)) / scale
    return Scores(float(np.sqrt(np.mean(mixture_mean**2))), float(-np.mean(mixture)))


def zero_change_rmse(targets: np.ndarray, standardizer: Standardizer) -> float:
    """RMSE of predicting no state change: the RMS of the standardized true changes."""
    return float(np.sqrt(np.mean((targets / standardizer.target_std) ** 2)))


def evaluate_mlgp(
    model: MlgpModel,
    observed: TaskData,
    held_out: TaskData,
    config: ExperimentConfig,
    rng: np.random.Generator,
) -> Scores:
    """Predicts the held-out rows one at a time, re-inferring q(h) after each revealed step."""
    inference = InferenceConfig(
        config.model.inference_steps,
        config.model.inference_learning_rate,
        int(rng.integers(2**31 - 1)),
    )
    samples = config.model_quality.latent_samples if model.latent_dim else 1
    mode = "sample" if model.latent_dim else "mean-latent"
    posterior = infer_latent(model, MultiTaskDataset([observed]), observed.task_id, inference)
    means, variances = [], []
    for t in range(len(held_out)):
        step = _rows(held_out, t, t + 1)
        predictions = [
            predict_delta(model, step.states, step.controls, posterior, mode, rng) for _ in range(samples)
        ]
        means.append(np.stack([p.mean for p in predictions]))
        variances.append(np.stack([p.variance for p in predictions]))
        if model.latent_dim and t + 1 < len(held_out):
            revealed = _join(observed, _rows(held_out, 0, t + 1))
            posterior = infer_latent(
                model, MultiTaskDataset([revealed]), observed.task_id, inference, initial=posterior
            )
    return score_predictions(
        np.concatenate(means, axis=1),
        np.concatenate(variances, axis=1),
        held_out.targets,
        model.standardizer,
    )


def run_seed(config: ExperimentConfig, seed: int) -> list[ResultRecord]:
    section = config.model_quality
    digest = config_hash(config)
    rng = np.random.default_rng(seed)
    train = MultiTaskDataset.from_trajectories(
        excited_trajectories(section.tasks.train_tasks(), section.trajectory_steps, config, rng)
    )
    tests = [
        trajectory.to_task_data()
        for trajectory in excited_trajectories(section.tasks.test_tasks(), section.trajectory_steps, config, rng)
    ]
    splits = [
        (block.head(section.observed_steps), _rows(block, section.observed_steps, len(block))) for block in tests
    ]
    standardizer = Standardizer.fit(train.blocks)

    def record(task_id: str, metric: str, value: float, units: str, model: str, m: int = 0) -> ResultRecord:
        return ResultRecord(EXPERIMENT_ID, digest, seed, task_id, metric, value, units, model, m)

    records = [
        record(held.task_id, "rmse", zero_change_rmse(held.targets, standardizer), "standardized", "zero-change")
        for _, held in splits
    ]
    for inducing in section.inducing_points:
        for name, latent_dim in (("mlgp", config.model.latent_dim), ("sgp", 0)):
            model = MlgpModel.initialize(train, latent_dim, inducing, rng)
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
            for observed, held in splits:
                scores = evaluate_mlgp(fitted, observed, held, config, rng)
                records.append(record(held.task_id, "rmse", scores.rmse, "standardized", name, inducing))
                records.append(record(held.task_id, "nll", scores.nll, "nats/transition", name, inducing))
            logger.info("seed %d: %s with %d inducing points evaluated", seed, name, inducing)

    if section.exact_gp:
        gp = fit_exact_gp(
            train,
            ExactGpConfig(
                steps=section.exact_gp_steps,
                max_points=section.exact_gp_max_points,
                seed=int(rng.integers(2**31 - 1)),
            ),
            standardizer,
        )
        for _, held in splits:
            prediction = exact_predict_delta(gp, held.states, held.controls)
            scores = score_predictions(
                prediction.mean[None], prediction.variance[None], held.targets, standardizer
            )
            records.append(record(held.task_id, "rmse", scores.rmse, "standardized", "exact-gp", gp.inputs.shape[0]))
            records.append(record(held.task_id, "nll", scores.nll, "nats/transition", "exact-gp", gp.inputs.shape[0]))
    return records


def _rows(block: TaskData, start: int, stop: int) -> TaskData:
    return TaskData(block.task_id, block.states[start:stop], block.controls[start:stop], block.targets[start:stop])


def _join(first: TaskData, second: TaskData) -> TaskData:
    return TaskData(
        first.task_id,
        np.vstack([first.states, second.states]),
        np.vstack([first.controls, second.controls]),
        np.vstack([first.targets, second.targets]),
    )


def summarize(records: list[ResultRecord]) -> tuple[pd.DataFrame, dict[str, object]]:
    """Curves over M (mean ± SE over seeds of per-seed task means) and the ML-GP vs SGP tally."""
    frame = pd.DataFrame([record.__dict__ for record in records])
    per_seed = frame.groupby(["model", "inducing_points", "metric", "seed"], sort=True)["value"].mean()
    rows = []
    for (model, inducing, metric), values in per_seed.groupby(level=[0, 1, 2], sort=True):
        stats = mean_and_se(values.to_numpy())
        rows.append({"model": model, "inducing_points": inducing, "metric": metric, **stats})
    curves = pd.DataFrame(rows, columns=["model", "inducing_points", "metric", "mean", "se", "n"])

    comparisons: dict[str, object] = {}
    for inducing in sorted(frame.loc[frame["model"] == "mlgp", "inducing_points"].unique()):
        wins = {}
        for metric in ("rmse", "nll"):
            ours = per_seed.loc[("mlgp", inducing, metric)]
            theirs = per_seed.loc[("sgp", inducing, metric)]
            wins[metric] = int((ours < theirs).sum())
        gap = per_seed.loc[("sgp", inducing, "nll")] - per_seed.loc[("mlgp", inducing, "nll")]
        comparisons[str(int(inducing))] = {
            "mlgp_better_rmse_seeds": wins["rmse"],
            "mlgp_better_nll_seeds": wins["nll"],
            "mean_nll_gap_sgp_minus_mlgp": float(gap.mean()),
        }
    return curves, {"seeds": int(frame["seed"].nunique()), "mlgp_vs_sgp": comparisons}


def run(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    results = map_seeds(run_seed, config, EXPERIMENT_ID)
    records = [record for _, seed_records in results for record in seed_records]
    source = sources_for(EXPERIMENT_ID, config_hash(config), config.seeds)
    curves, summary = summarize(records)
    return [
        write_records(out_dir / "results.csv", records, source),
        write_table(out_dir / "curves.csv", curves, source),
        write_json(out_dir / "summary.json", {"config_hash": config_hash(config), **summary}, source),
    ]
