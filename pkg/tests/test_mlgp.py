from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from meta_dynamics.envs.toy import toy_family, toy_function
from meta_dynamics.errors import UnknownTaskError
from meta_dynamics.models.data import MultiTaskDataset, TaskData
from meta_dynamics.models.exact_gp import ExactGp, log_marginal_likelihood
from meta_dynamics.models.kernel import kernel_matrix
from meta_dynamics.models.latent import TaskPosterior
from meta_dynamics.models.mlgp import (
    FitConfig,
    InferenceConfig,
    MlgpModel,
    elbo,
    elbo_gradients,
    fit,
    infer_latent,
    parameter_group,
    predict,
    predict_delta,
)

from helpers import numeric_gradient


def toy_model(latent_dim: int = 1, inducing: int = 5, seed: int = 0) -> tuple[MlgpModel, MultiTaskDataset]:
    family = toy_family(3, np.random.default_rng(seed), train_points=8, test_points=4)
    model = MlgpModel.initialize(family.train, latent_dim, inducing, np.random.default_rng(seed))
    # move away from the prior-matched start so every gradient is informative
    rng = np.random.default_rng(seed + 1)
    perturbed = {
        name: value + 0.1 * rng.standard_normal(value.shape) for name, value in model.parameters().items()
    }
    return model.with_parameters(perturbed), family.train


@pytest.mark.parametrize(
    "name",
    [
        "kernel.log_variance",
        "kernel.log_lengthscales",
        "likelihood.log_noise",
        "inducing.locations",
        "variational.means",
        "variational.factor.0",
        "latent.means",
        "latent.log_stds",
    ],
)
def test_elbo_gradients_match_finite_differences(name: str) -> None:
    model, data = toy_model()
    noise = {task_id: np.array([0.3 * (i + 1)]) for i, task_id in enumerate(data.task_ids)}

    def value(array: np.ndarray) -> float:
        return elbo(model.with_parameters({name: array}), data.blocks, latent_noise=noise).elbo

    _, grads = elbo_gradients(model, data.blocks, latent_noise=noise)
    numeric = numeric_gradient(value, model.parameters()[name], step=1e-5)

    np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-6)


def test_elbo_scales_the_likelihood_to_the_full_dataset() -> None:
    model, data = toy_model()
    noise = {task_id: np.zeros(1) for task_id in data.task_ids}
    batch = data.blocks[:1]

    once = elbo(model, batch, latent_noise=noise)
    twice = elbo(model, batch, latent_noise=noise, total_transitions=2 * len(batch[0]))

    assert twice.elbo - once.elbo == pytest.approx(once.expected_log_likelihood, rel=1e-10)
    assert once.kl_inducing >= 0.0
    assert once.kl_latent >= 0.0


def test_kl_over_unseen_minibatch_tasks_still_counts() -> None:
    model, data = toy_model()
    noise = {task_id: np.zeros(1) for task_id in data.task_ids}

    local = elbo(model, data.blocks[:1], latent_noise=noise)
    everyone = elbo(model, data.blocks[:1], latent_noise=noise, kl_tasks=data.task_ids)

    assert everyone.kl_latent > local.kl_latent


def test_latent_free_model_has_no_latent_parameters() -> None:
    model, data = toy_model(latent_dim=0)

    terms = elbo(model, data.blocks, np.random.default_rng(0))

    assert not any(parameter_group(name) == "latent" for name in model.parameters())
    assert model.input_dim == 1
    assert terms.kl_latent == 0.0


def test_parameter_groups() -> None:
    assert parameter_group("kernel.log_variance") == "hyperparameters"
    assert parameter_group("likelihood.log_noise") == "hyperparameters"
    assert parameter_group("variational.factor.3") == "variational"
    with pytest.raises(KeyError):
        parameter_group("optimizer.step")


def test_unknown_tasks_are_rejected() -> None:
    model, _ = toy_model()
    stranger = TaskData("stranger", np.zeros((2, 1)), np.zeros((2, 0)), np.zeros((2, 1)))

    with pytest.raises(UnknownTaskError):
        elbo(model, [stranger], np.random.default_rng(0))


def test_fitting_improves_the_objective() -> None:
    model, data = toy_model(inducing=6)

    result = fit(model, data, FitConfig(steps=150, batch_size=2, seed=3, learning_rate=0.02))

    assert len(result.losses) == 150
    assert np.mean(result.losses[-10:]) < np.mean(result.losses[:10])
    assert result.model.rng_state is not None


def test_fitting_is_reproducible_for_a_seed() -> None:
    model, data = toy_model()
    config = FitConfig(steps=20, batch_size=2, seed=11)

    first = fit(model, data, config)
    second = fit(model, data, config)

    assert first.losses == second.losses
    for name, value in first.model.parameters().items():
        np.testing.assert_array_equal(value, second.model.parameters()[name])


def test_latent_only_training_freezes_everything_else() -> None:
    model, data = toy_model()

    result = fit(model, data, FitConfig(steps=10, seed=0, trainable="latent", learning_rate=0.05))

    before, after = model.parameters(), result.model.parameters()
    for name in before:
        if parameter_group(name) == "latent":
            assert not np.array_equal(before[name], after[name])
        else:
            np.testing.assert_array_equal(before[name], after[name])


def test_inference_without_observations_returns_the_prior() -> None:
    model, _ = toy_model()

    posterior = infer_latent(model, MultiTaskDataset(), "new-task")

    np.testing.assert_array_equal(posterior.mean, np.zeros(1))
    np.testing.assert_array_equal(posterior.std, np.ones(1))


def test_inference_fits_only_the_new_task_and_leaves_the_model_alone() -> None:
    model, _ = toy_model()
    family = toy_family(1, np.random.default_rng(9), offsets=[1.0], train_points=5, prefix="new")
    snapshot = model.parameters()

    posterior = infer_latent(model, family.train, "new-0", InferenceConfig(steps=30, seed=1))

    assert "new-0" not in model.latents
    assert not np.array_equal(posterior.mean, np.zeros(1))
    for name, value in model.parameters().items():
        np.testing.assert_array_equal(value, snapshot[name])


def test_prediction_modes() -> None:
    model, data = toy_model()
    states = np.linspace(-2.0, 2.0, 5)[:, None]
    controls = np.zeros((5, 0))
    posterior = model.latents.get(data.task_ids[0])

    first = predict_delta(model, states, controls, posterior)
    second = predict_delta(model, states, controls, posterior)
    sampled = predict_delta(model, states, controls, posterior, "sample", np.random.default_rng(0))

    np.testing.assert_array_equal(first.mean, second.mean)
    assert np.all(first.variance > 0.0)
    assert sampled.mean.shape == (5, 1)
    with pytest.raises(ValueError):
        predict_delta(model, states, controls, posterior, "sample")
    with pytest.raises(ValueError):
        predict_delta(model, states, controls, posterior, "median")


def test_one_step_prediction_adds_the_change_to_the_state() -> None:
    model, _ = toy_model()
    state = np.array([0.5])

    delta = predict_delta(model, state[None, :], np.zeros((1, 0)))
    step = predict(model, state, np.zeros(0))

    np.testing.assert_allclose(step.mean, state + delta.mean[0])
    np.testing.assert_allclose(step.variance, delta.variance[0])


@pytest.mark.slow
def test_task_latents_separate_toy_offsets() -> None:
    family = toy_family(4, np.random.default_rng(0), offsets=[-1.5, -0.5, 0.5, 1.5], train_points=25)
    model = MlgpModel.initialize(family.train, 1, 20, np.random.default_rng(0))
    fitted = fit(model, family.train, FitConfig(steps=1500, batch_size=4, seed=0, learning_rate=0.02)).model
    sgp = fit(
        MlgpModel.initialize(family.train, 0, 20, np.random.default_rng(0)),
        family.train,
        FitConfig(steps=1500, batch_size=4, seed=0, learning_rate=0.02),
    ).model

    means = [fitted.latents.get(task_id).mean[0] for task_id in family.train.task_ids]
    errors, sgp_errors = [], []
    for block in family.test.blocks:
        truth = toy_function(block.states) + family.offsets[block.task_id]
        latent = predict_delta(fitted, block.states, block.controls, fitted.latents.get(block.task_id))
        plain = predict_delta(sgp, block.states, block.controls)
        errors.append(np.mean((latent.mean - truth) ** 2))
        sgp_errors.append(np.mean((plain.mean - truth) ** 2))

    order = np.argsort(means)
    assert list(order) in ([0, 1, 2, 3], [3, 2, 1, 0])
    assert np.sqrt(np.mean(errors)) < 0.5 * np.sqrt(np.mean(sgp_errors))


def test_copies_do_not_share_latent_state() -> None:
    model, data = toy_model()
    clone = model.copy()

    clone.latents.set(data.task_ids[0], TaskPosterior(np.array([5.0]), np.array([0.2])))

    assert model.latents.get(data.task_ids[0]).mean[0] != 5.0
    assert replace(model).latent_dim == 1


def sparse_bound(model: MlgpModel, block: TaskData) -> float:
    """The uncollapsed sparse GP bound written out directly in numpy."""
    scaled = model.standardizer.block(block)
    inputs = np.hstack([scaled.states, scaled.controls])
    locations = model.inducing.locations
    kzz = kernel_matrix(locations, None, model.kernel)
    kzx = kernel_matrix(locations, inputs, model.kernel)
    weights = np.linalg.solve(kzz, kzx)
    total = 0.0
    for d in range(model.state_dim):
        mean_u = model.variational.means[:, d]
        cov_u = model.variational.covariance(d)
        mean = weights.T @ mean_u
        variance = model.kernel.variance - np.sum(kzx * weights, axis=0) + np.sum(weights * (cov_u @ weights), axis=0)
        noise = model.noise_variance[d]
        residual = scaled.targets[:, d] - mean
        total += np.sum(-0.5 * np.log(2 * np.pi * noise) - 0.5 * (residual**2 + variance) / noise)
        size = locations.shape[0]
        total -= 0.5 * (
            np.trace(np.linalg.solve(kzz, cov_u))
            + mean_u @ np.linalg.solve(kzz, mean_u)
            - size
            + np.linalg.slogdet(kzz)[1]
            - np.linalg.slogdet(cov_u)[1]
        )
    return float(total)


def test_latent_free_single_task_elbo_is_the_sparse_gp_bound() -> None:
    family = toy_family(1, np.random.default_rng(4), train_points=10, test_points=2)
    model = MlgpModel.initialize(family.train, 0, 5, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    perturbed = {name: value + 0.1 * rng.standard_normal(value.shape) for name, value in model.parameters().items()}
    model = model.with_parameters(
        {
            **perturbed,
            "inducing.locations": np.linspace(-1.6, 1.6, 5)[:, None],
            "likelihood.log_noise": np.array([[np.log(0.2)]]),
        }
    )
    block = family.train.blocks[0]
    scaled = model.standardizer.block(block)
    exact = ExactGp(model.kernel, model.log_noise, scaled.states, scaled.targets, model.standardizer)

    terms = elbo(model, [block], np.random.default_rng(0))

    assert terms.elbo == pytest.approx(sparse_bound(model, block), abs=1e-8)
    assert terms.elbo <= log_marginal_likelihood(exact) + 1e-9
