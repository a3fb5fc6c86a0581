"""
Meta-training and meta-testing on the RL task grid, plus the baselines.

Each seed runs the configured model kind and, when listed, the SGP-ML and
SGP-I baselines. Meta-RL state is checkpointed after every pass under
``<out_dir>/checkpoints/seed-<seed>/<model>/<phase>``; a re-run with the
same output directory continues from there.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from ..control.metarl import (
    STATE_FILE,
    ExperimentState,
    RlConfig,
    TaskSpec,
    TrialRecord,
    baseline_sgp_i,
    load_state,
    meta_test,
    meta_train,
    restore_rng,
    success_curve,
    task_rng,
)
from .config import ExperimentConfig, config_hash
from .results import ResultRecord, mean_and_se, sources_for, write_json, write_records, write_table
from .runner import map_seeds

logger = logging.getLogger(__name__)

EXPERIMENT_ID = "rl"
PHASES = ("train", "test")


@dataclass
class SeedOutcome:
    records: list[ResultRecord] = field(default_factory=list)
    trials: list[dict[str, object]] = field(default_factory=list)
    curves: list[dict[str, object]] = field(default_factory=list)


def model_kinds(config: ExperimentConfig) -> list[str]:
    kinds = [config.rl.model_kind]
    if "sgp-ml" in config.rl.baselines and "sgp-ml" not in kinds:
        kinds.append("sgp-ml")
    return kinds


def _resume(directory: Optional[Path]) -> Optional[ExperimentState]:
    if directory is None or not (directory / STATE_FILE).exists():
        return None
    state = load_state(directory)
    logger.info("resuming %s from %s (pass %d)", state.phase, directory, state.passes)
    return state


PhaseRun = Callable[[np.random.Generator, Optional[Path], Optional[ExperimentState]], ExperimentState]


def _phase(
    run: PhaseRun,
    directory: Optional[Path],
    rng: np.random.Generator,
) -> ExperimentState:
    """Run one phase, continuing from ``directory`` when it holds a checkpoint."""
    state = _resume(directory)
    if state is None:
        return run(rng, directory, None)
    if state.complete:
        return state
    return run(restore_rng(state), directory, state)


def run_shared(
    kind: str,
    train_tasks: list[TaskSpec],
    test_tasks: list[TaskSpec],
    config: RlConfig,
    seed: int,
    checkpoint_root: Optional[Path],
) -> tuple[ExperimentState, ExperimentState]:
    """Meta-train then meta-test one shared model (ML-GP or SGP-ML)."""
    directories = {
        phase: checkpoint_root / phase if checkpoint_root is not None else None for phase in PHASES
    }
    rng = task_rng(seed, f"rl:{kind}")
    trained = _phase(
        lambda r, d, s: meta_train(train_tasks, config, r, d, resume=s),
        directories["train"],
        rng,
    )
    tested = _phase(
        lambda r, d, s: meta_test(trained, test_tasks, config, r, d, resume=s),
        directories["test"],
        restore_rng(trained),
    )
    return trained, tested


def _task_records(
    record: Callable[..., ResultRecord], kind: str, state: ExperimentState, config: RlConfig
) -> list[ResultRecord]:
    rows = []
    for task in state.tasks:
        task_id = task.task_id
        rows.append(record(task_id, f"{state.phase}_interaction_seconds",
                           state.interaction_seconds(task_id, config), "s", kind))
        rows.append(record(task_id, f"{state.phase}_solved", float(state.solved[task_id]), "flag", kind))
        rows.append(record(task_id, f"{state.phase}_trials", float(state.trials[task_id]), "trials", kind))
    return rows


def _trial_rows(digest: str, seed: int, kind: str, log: list[TrialRecord]) -> list[dict[str, object]]:
    return [{"config_hash": digest, "seed": seed, "model": kind, **asdict(entry)} for entry in log]


def _curve_rows(digest: str, seed: int, kind: str, phase: str, log: list[TrialRecord], task_ids: list[str],
                max_trials: int) -> list[dict[str, object]]:
    curve = success_curve([entry for entry in log if entry.phase == phase], task_ids, max_trials)
    return [
        {"config_hash": digest, "seed": seed, "model": kind, "phase": phase, "trial": trial,
         "success_rate": rate}
        for trial, rate in enumerate(curve)
    ]


def run_seed(config: ExperimentConfig, seed: int) -> SeedOutcome:
    digest = config_hash(config)
    train_tasks = config.rl.tasks.train_tasks()
    test_tasks = config.rl.tasks.test_tasks()
    out_dir = Path(config.out_dir) if config.out_dir and config.rl.checkpoints else None
    outcome = SeedOutcome()

    def record(task_id: str, metric: str, value: float, units: str, model: str) -> ResultRecord:
        return ResultRecord(EXPERIMENT_ID, digest, seed, task_id, metric, float(value), units, model,
                            config.model.inducing_points)

    for kind in model_kinds(config):
        rl_config = config.rl_config(kind)
        root = out_dir / "checkpoints" / f"seed-{seed}" / kind if out_dir is not None else None
        trained, tested = run_shared(kind, train_tasks, test_tasks, rl_config, seed, root)
        outcome.records += _task_records(record, kind, trained, rl_config)
        outcome.records += _task_records(record, kind, tested, rl_config)
        for task_id, solved in tested.single_shot.items():
            outcome.records.append(record(task_id, "single_shot", float(solved), "flag", kind))
        log = trained.trial_log + tested.trial_log
        outcome.trials += _trial_rows(digest, seed, kind, log)
        for phase, tasks in (("train", train_tasks), ("test", test_tasks)):
            outcome.curves += _curve_rows(digest, seed, kind, phase, log, [t.task_id for t in tasks],
                                          rl_config.max_trials)
        logger.info("seed %d: %s solved %d/%d training and %d/%d test tasks", seed, kind,
                    sum(trained.solved.values()), len(train_tasks),
                    sum(tested.solved.values()), len(test_tasks))

    if "sgp-i" in config.rl.baselines:
        rl_config = config.rl_config("sgp-ml")
        baseline = baseline_sgp_i(train_tasks, test_tasks, rl_config, seed)
        log = []
        for state in baseline.runs.values():
            outcome.records += _task_records(record, "sgp-i", state, rl_config)
            log += state.trial_log
        for (source, target), solved in baseline.single_shot.items():
            outcome.records.append(record(f"{source}->{target}", "single_shot", float(solved), "flag", "sgp-i"))
        outcome.trials += _trial_rows(digest, seed, "sgp-i", log)
        for phase, tasks in (("train", train_tasks), ("test", test_tasks)):
            outcome.curves += _curve_rows(digest, seed, "sgp-i", phase, log, [t.task_id for t in tasks],
                                          rl_config.max_trials)
    return outcome


def aggregate(records: list[ResultRecord]) -> dict[str, dict[str, dict[str, float]]]:
    """Per model: train/test interaction seconds and single-shot rate, mean ± SE over seeds.

    Each seed contributes its mean over tasks.
    """
    frame = pd.DataFrame([asdict(record) for record in records])
    wanted = {
        "train_seconds": "train_interaction_seconds",
        "test_seconds": "test_interaction_seconds",
        "single_shot_rate": "single_shot",
        "train_solved_fraction": "train_solved",
        "test_solved_fraction": "test_solved",
    }
    summary: dict[str, dict[str, dict[str, float]]] = {}
    for model, group in frame.groupby("model", sort=True):
        summary[model] = {}
        for name, metric in wanted.items():
            per_seed = group[group["metric"] == metric].groupby("seed", sort=True)["value"].mean()
            summary[model][name] = mean_and_se(per_seed.to_numpy())
    return summary


def curve_table(rows: list[dict[str, object]]) -> pd.DataFrame:
    frame = pd.DataFrame(rows)
    out = []
    keys = ["config_hash", "model", "phase", "trial"]
    for values, group in frame.groupby(keys, sort=True):
        out.append({**dict(zip(keys, values)), **mean_and_se(group["success_rate"])})
    return pd.DataFrame(out, columns=[*keys, "mean", "se", "n"])


def run(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    config = replace(config, out_dir=str(out_dir))
    results = map_seeds(run_seed, config, EXPERIMENT_ID)
    outcomes = [outcome for _, outcome in results]
    records = [record for outcome in outcomes for record in outcome.records]
    digest = config_hash(config)
    source = sources_for(EXPERIMENT_ID, digest, config.seeds)
    return [
        write_records(out_dir / "results.csv", records, source),
        write_table(out_dir / "trials.csv",
                    pd.DataFrame([row for outcome in outcomes for row in outcome.trials]), source),
        write_table(out_dir / "curves.csv",
                    curve_table([row for outcome in outcomes for row in outcome.curves]), source),
        write_json(out_dir / "summary.json", {"config_hash": digest, "models": aggregate(records)}, source),
    ]
