from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from meta_dynamics.artifacts import RECORD_SUFFIX
from meta_dynamics.envs.toy import toy_family
from meta_dynamics.experiments import model_quality
from meta_dynamics.experiments.config import ExperimentConfig, ModelQualitySection, ModelSection
from meta_dynamics.experiments.embedding import projection_correlation
from meta_dynamics.experiments.model_quality import (
    evaluate_mlgp,
    excitation_controls,
    score_predictions,
    summarize,
    zero_change_rmse,
)
from meta_dynamics.experiments.results import (
    RESULT_COLUMNS,
    ResultRecord,
    mean_and_se,
    sources_for,
    write_json,
    write_records,
)
from meta_dynamics.experiments.rl import aggregate, curve_table
from meta_dynamics.models.data import Standardizer
from meta_dynamics.models.mlgp import MlgpModel


def test_mean_and_standard_error() -> None:
    stats = mean_and_se([1.0, 2.0, 3.0, 4.0])

    assert stats["mean"] == pytest.approx(2.5)
    assert stats["se"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert stats["n"] == 4
    assert mean_and_se([5.0]) == {"mean": 5.0, "se": 0.0, "n": 1}
    assert mean_and_se([])["n"] == 0


def test_result_files_carry_artifact_records(tmp_path: Path) -> None:
    records = [ResultRecord("rl", "abc", 0, "task", "single_shot", 1.0, "flag", "mlgp", 100)]
    source = sources_for("rl", "abc", [0, 1])

    table = write_records(tmp_path / "results.csv", records, source)
    summary = write_json(tmp_path / "summary.json", {"value": 1}, source)

    frame = pd.read_csv(table)
    assert list(frame.columns) == RESULT_COLUMNS
    assert frame.loc[0, "metric"] == "single_shot"
    assert json.loads(summary.read_text(encoding="utf-8")) == {"value": 1}
    record = json.loads((tmp_path / f"results.csv{RECORD_SUFFIX}").read_text(encoding="utf-8"))
    assert record["source"] == ["experiment:rl", "config:abc", "seed:0", "seed:1"]
    assert (tmp_path / f"summary.json{RECORD_SUFFIX}").is_file()


def test_single_gaussian_scores_match_scipy() -> None:
    rng = np.random.default_rng(0)
    targets = rng.standard_normal((20, 2))
    means = targets + 0.3 * rng.standard_normal((20, 2))
    variances = rng.uniform(0.1, 1.0, (20, 2))
    standardizer = Standardizer.identity(2, 1)

    scores = score_predictions(means[None], variances[None], targets, standardizer)

    expected_nll = -np.mean(np.sum(norm.logpdf(targets, means, np.sqrt(variances)), axis=1))
    assert scores.nll == pytest.approx(expected_nll, rel=1e-10)
    assert scores.rmse == pytest.approx(np.sqrt(np.mean((targets - means) ** 2)))


def test_identical_mixture_components_score_like_one() -> None:
    rng = np.random.default_rng(1)
    targets = rng.standard_normal((10, 1))
    means = rng.standard_normal((10, 1))
    variances = np.full((10, 1), 0.5)
    standardizer = Standardizer.identity(1, 0)

    single = score_predictions(means[None], variances[None], targets, standardizer)
    mixed = score_predictions(np.stack([means] * 4), np.stack([variances] * 4), targets, standardizer)

    assert mixed.nll == pytest.approx(single.nll, rel=1e-12)
    assert mixed.rmse == pytest.approx(single.rmse, rel=1e-12)


def test_scores_are_in_standardized_units() -> None:
    targets = np.array([[2.0], [-2.0]])
    scaled = Standardizer(np.zeros(1), np.ones(1), np.zeros(0), np.ones(0), np.array([2.0]))

    assert zero_change_rmse(targets, scaled) == pytest.approx(1.0)
    scores = score_predictions(np.zeros((1, 2, 1)), np.full((1, 2, 1), 4.0), targets, scaled)
    assert scores.rmse == pytest.approx(1.0)
    assert scores.nll == pytest.approx(-norm.logpdf(1.0))


def test_excitation_signal_is_fixed_and_bounded() -> None:
    first = excitation_controls(50, 2, 15.0)

    np.testing.assert_array_equal(first, excitation_controls(50, 2, 15.0))
    assert first.shape == (50, 2)
    np.testing.assert_allclose(np.max(np.abs(first), axis=0), 12.0)


def test_model_quality_summary_counts_seed_wins() -> None:
    records = []
    for seed, (ours, theirs) in enumerate([(0.5, 0.8), (0.9, 0.7), (0.4, 0.6)]):
        for model, value in (("mlgp", ours), ("sgp", theirs)):
            for metric in ("rmse", "nll"):
                records.append(ResultRecord("model-quality", "h", seed, "t", metric, value, "", model, 30))
        records.append(ResultRecord("model-quality", "h", seed, "t", "rmse", 1.0, "", "zero-change", 0))

    curves, summary = summarize(records)

    assert summary["seeds"] == 3
    assert summary["mlgp_vs_sgp"]["30"]["mlgp_better_rmse_seeds"] == 2
    assert summary["mlgp_vs_sgp"]["30"]["mean_nll_gap_sgp_minus_mlgp"] == pytest.approx(0.1)
    mlgp = curves[(curves["model"] == "mlgp") & (curves["metric"] == "rmse")].iloc[0]
    assert mlgp["mean"] == pytest.approx(0.6)
    assert mlgp["n"] == 3


def test_rl_aggregation_averages_tasks_within_seeds() -> None:
    records = [
        ResultRecord("rl", "h", 0, "a", "train_interaction_seconds", 6.0, "s", "mlgp"),
        ResultRecord("rl", "h", 0, "b", "train_interaction_seconds", 12.0, "s", "mlgp"),
        ResultRecord("rl", "h", 1, "a", "train_interaction_seconds", 3.0, "s", "mlgp"),
        ResultRecord("rl", "h", 0, "x", "single_shot", 1.0, "flag", "mlgp"),
        ResultRecord("rl", "h", 1, "x", "single_shot", 0.0, "flag", "mlgp"),
    ]

    summary = aggregate(records)

    assert summary["mlgp"]["train_seconds"]["mean"] == pytest.approx(6.0)
    assert summary["mlgp"]["single_shot_rate"]["mean"] == pytest.approx(0.5)
    assert summary["mlgp"]["test_seconds"]["n"] == 0


def test_curve_table_averages_over_seeds() -> None:
    rows = [
        {"config_hash": "h", "seed": seed, "model": "mlgp", "phase": "train", "trial": trial, "success_rate": rate}
        for seed, rates in enumerate([[0.0, 0.5], [0.5, 1.0]])
        for trial, rate in enumerate(rates)
    ]

    table = curve_table(rows)

    assert table["mean"].tolist() == [0.25, 0.75]
    assert table["n"].tolist() == [2, 2]
    assert table["config_hash"].tolist() == ["h", "h"]


def test_projection_correlation_ignores_axis_orientation() -> None:
    rng = np.random.default_rng(2)
    values = np.linspace(0.3, 0.9, 8)
    rotation = np.array([[0.6, -0.8], [0.8, 0.6]])
    means = np.column_stack([values, 0.01 * rng.standard_normal(8)]) @ rotation

    assert projection_correlation(means, values) == pytest.approx(1.0)
    assert np.isnan(projection_correlation(means, np.ones(8)))


def test_held_out_rows_refine_the_latent_one_step_at_a_time(monkeypatch: pytest.MonkeyPatch) -> None:
    family = toy_family(2, np.random.default_rng(0), train_points=6, test_points=6)
    model = MlgpModel.initialize(family.train, 1, 4, np.random.default_rng(1))
    block = family.test.blocks[0]
    observed, held_out = block.head(2), model_quality._rows(block, 2, 6)
    config = ExperimentConfig(
        model=ModelSection(inference_steps=2), model_quality=ModelQualitySection(latent_samples=2)
    )
    seen: list[tuple[int, bool]] = []
    real = model_quality.infer_latent

    def counting(model, fragment, task_id, inference, initial=None):
        seen.append((fragment.transition_count, initial is not None))
        return real(model, fragment, task_id, inference, initial=initial)

    monkeypatch.setattr(model_quality, "infer_latent", counting)

    scores = evaluate_mlgp(model, observed, held_out, config, np.random.default_rng(2))

    assert seen == [(2, False), (3, True), (4, True), (5, True)]
    assert np.isfinite(scores.rmse)
    assert np.isfinite(scores.nll)
