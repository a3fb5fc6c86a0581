from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from meta_dynamics import autodiff as ad
from meta_dynamics.envs.toy import toy_family
from meta_dynamics.models.data import Standardizer
from meta_dynamics.models.exact_gp import (
    ExactGp,
    ExactGpConfig,
    fit_exact_gp,
    log_marginal_likelihood,
    log_marginal_likelihood_node,
    posterior,
    predict_delta,
)
from meta_dynamics.models.kernel import KernelParams, kernel_matrix

from helpers import numeric_gradient


def small_gp(seed: int = 0) -> ExactGp:
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-2.0, 2.0, (15, 2))
    targets = np.column_stack([np.sin(inputs[:, 0]), np.cos(inputs[:, 1])])
    return ExactGp(
        KernelParams(np.log(0.8), np.log(np.array([0.7, 1.3]))),
        np.log(np.array([0.05, 0.1])),
        inputs,
        targets,
        Standardizer.identity(2, 0),
    )


def test_log_marginal_likelihood_matches_scipy() -> None:
    gp = small_gp()
    gram = kernel_matrix(gp.inputs, None, gp.kernel)

    expected = sum(
        multivariate_normal(np.zeros(15), gram + noise * np.eye(15)).logpdf(gp.targets[:, d])
        for d, noise in enumerate(gp.noise_variance)
    )

    assert log_marginal_likelihood(gp) == pytest.approx(expected, rel=1e-9)


def test_log_marginal_likelihood_gradient_matches_finite_differences() -> None:
    gp = small_gp(1)
    start = gp.kernel.log_lengthscales[None, :]

    def value(log_lengthscales: np.ndarray) -> float:
        tape = ad.Tape()
        return log_marginal_likelihood_node(
            tape.constant(gp.inputs),
            gp.targets,
            tape.constant(gp.kernel.log_variance),
            tape.constant(log_lengthscales),
            tape.constant(gp.log_noise),
        ).item()

    tape = ad.Tape()
    objective = log_marginal_likelihood_node(
        tape.constant(gp.inputs),
        gp.targets,
        tape.constant(gp.kernel.log_variance),
        tape.variable(start, "ell"),
        tape.constant(gp.log_noise),
    )
    analytic = tape.backward(objective)["ell"]

    np.testing.assert_allclose(analytic, numeric_gradient(value, start, step=1e-5), rtol=1e-4, atol=1e-6)


def test_posterior_at_training_inputs_is_close_to_the_targets() -> None:
    gp = small_gp(2)

    mean, variance = posterior(gp, gp.inputs)

    assert np.sqrt(np.mean((mean - gp.targets) ** 2)) < 0.5 * np.sqrt(np.mean(gp.targets**2))
    assert np.all(variance >= 0.0)
    assert np.all(variance < gp.kernel.variance)


def test_far_away_points_fall_back_to_the_prior() -> None:
    gp = small_gp(3)

    mean, variance = posterior(gp, np.full((1, 2), 50.0))

    np.testing.assert_allclose(mean, 0.0, atol=1e-10)
    np.testing.assert_allclose(variance, gp.kernel.variance, rtol=1e-10)


def test_fitting_raises_the_marginal_likelihood_and_subsamples() -> None:
    family = toy_family(3, np.random.default_rng(4), train_points=30)
    config = ExactGpConfig(steps=60, max_points=50, seed=2)

    untrained = fit_exact_gp(family.train, ExactGpConfig(steps=0, max_points=50, seed=2))
    trained = fit_exact_gp(family.train, config)
    again = fit_exact_gp(family.train, config)

    assert trained.inputs.shape == (50, 1)
    assert log_marginal_likelihood(trained) > log_marginal_likelihood(untrained)
    np.testing.assert_array_equal(trained.inputs, again.inputs)
    assert trained.kernel.log_variance == again.kernel.log_variance


def test_predictions_are_in_natural_units_with_noise() -> None:
    family = toy_family(2, np.random.default_rng(5), train_points=20)
    gp = fit_exact_gp(family.train, ExactGpConfig(steps=20))
    block = family.test.blocks[0]

    prediction = predict_delta(gp, block.states, block.controls)
    _, latent_var = posterior(gp, gp.standardizer.states(block.states))

    assert prediction.mean.shape == block.targets.shape
    np.testing.assert_allclose(
        prediction.variance, (latent_var + gp.noise_variance) * gp.standardizer.target_std**2
    )
