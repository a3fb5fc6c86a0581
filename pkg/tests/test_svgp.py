from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from meta_dynamics import autodiff as ad
from meta_dynamics.models.data import Standardizer
from meta_dynamics.models.exact_gp import ExactGp, posterior
from meta_dynamics.models.kernel import KernelParams, kernel_matrix
from meta_dynamics.models.svgp import (
    InducingSet,
    OutputVariational,
    kl_inducing,
    posterior_mean,
    posterior_var,
)


def setup(size: int = 6, dims: int = 2) -> tuple[np.ndarray, KernelParams, np.ndarray]:
    rng = np.random.default_rng(3)
    locations = rng.uniform(-2.0, 2.0, (size, dims))
    p = KernelParams(np.log(1.3), np.log(np.full(dims, 0.9)))
    factor, _ = ad.jittered_cholesky(kernel_matrix(locations, None, p))
    return locations, p, factor


def test_prior_matched_posterior_reproduces_the_prior() -> None:
    locations, p, factor = setup()
    variational = OutputVariational.prior_matched(factor, 2)
    points = np.random.default_rng(4).uniform(-3.0, 3.0, (10, 2))

    for output in range(2):
        mean = posterior_mean(points, locations, variational.means[:, output], p)
        var = posterior_var(points, locations, variational.factor(output), p)
        np.testing.assert_allclose(mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(var, p.variance, rtol=1e-6)
    assert kl_inducing(variational.means, [variational.factor(0), variational.factor(1)], locations, p) == pytest.approx(
        0.0, abs=1e-6
    )


def test_zero_covariance_interpolates_at_inducing_points() -> None:
    locations, p, factor = setup()
    values = np.sin(locations[:, 0]) + locations[:, 1]
    gram = factor @ factor.T
    mean_vector = gram @ np.linalg.solve(gram, values)

    mean = posterior_mean(locations, locations, mean_vector, p)
    var = posterior_var(locations, locations, np.zeros((6, 6)), p)

    np.testing.assert_allclose(mean, values, atol=1e-6)
    np.testing.assert_array_less(var, 1e-5)
    assert var.min() >= 1e-12


def test_variance_never_drops_below_the_floor() -> None:
    locations, p, _ = setup()

    var = posterior_var(locations, locations, np.zeros((6, 6)), p)
    raw = posterior_var(locations, locations, np.zeros((6, 6)), p, floor=None)

    assert np.all(var >= 1e-12)
    assert np.all(var >= raw)


def test_kl_matches_the_gaussian_closed_form() -> None:
    locations, p, kzz_factor = setup()
    rng = np.random.default_rng(5)
    mean = rng.standard_normal(6)
    raw = np.tril(0.3 * rng.standard_normal((6, 6)), -1) + np.diag(np.log(rng.uniform(0.2, 0.8, 6)))
    variational = OutputVariational(mean[:, None], raw[None])
    cov_q = variational.covariance(0)
    cov_p = kzz_factor @ kzz_factor.T

    expected = 0.5 * (
        np.trace(np.linalg.solve(cov_p, cov_q))
        + mean @ np.linalg.solve(cov_p, mean)
        - 6
        + np.linalg.slogdet(cov_p)[1]
        - np.linalg.slogdet(cov_q)[1]
    )

    assert kl_inducing(mean, [variational.factor(0)], locations, p) == pytest.approx(expected, rel=1e-6)
    assert expected > 0.0


def test_factor_keeps_a_positive_diagonal() -> None:
    raw = np.array([[[-5.0, 0.0], [2.0, 3.0]]])
    variational = OutputVariational(np.zeros((2, 1)), raw)

    factor = variational.factor(0)

    np.testing.assert_allclose(np.diag(factor), np.exp([-5.0, 3.0]))
    assert factor[0, 1] == 0.0
    assert factor[1, 0] == 2.0


def test_inducing_points_come_from_the_data() -> None:
    rng = np.random.default_rng(6)
    inputs = rng.standard_normal((200, 3))

    many = InducingSet.from_inputs(inputs, 20, np.random.default_rng(0))
    few = InducingSet.from_inputs(inputs[:10], 5, np.random.default_rng(0))

    assert many.size == 20
    assert few.size == 5
    assert all(any(np.array_equal(row, data) for data in inputs[:10]) for row in few.locations)
    again = InducingSet.from_inputs(inputs, 20, np.random.default_rng(0))
    np.testing.assert_array_equal(many.locations, again.locations)


def test_exact_posterior_at_the_data_reproduces_the_full_gp() -> None:
    inputs, p, _ = setup(size=8)
    targets = np.sin(inputs[:, 0]) - 0.5 * inputs[:, 1]
    noise = 0.1
    gram = kernel_matrix(inputs, None, p)
    gain = np.linalg.solve(gram + noise * np.eye(8), gram)
    mean_u = gain.T @ targets
    cov_u = gram - gram @ gain
    factor = np.linalg.cholesky(0.5 * (cov_u + cov_u.T))
    gp = ExactGp(p, np.array([np.log(noise)]), inputs, targets[:, None], Standardizer.identity(1, 1))
    points = np.random.default_rng(7).uniform(-3.0, 3.0, (15, 2))

    exact_mean, exact_var = posterior(gp, points)

    np.testing.assert_allclose(posterior_mean(points, inputs, mean_u, p), exact_mean[:, 0], atol=1e-6)
    np.testing.assert_allclose(posterior_var(points, inputs, factor, p), exact_var[:, 0], atol=1e-6)


def test_single_inducing_point_kl_matches_quadrature() -> None:
    location = np.array([[0.3, -0.2]])
    p = KernelParams(np.log(1.7), np.log(np.array([0.8, 1.1])))
    mean, spread = 0.6, 0.4
    prior_sd = np.sqrt(p.variance)

    def integrand(u: float) -> float:
        log_q = norm.logpdf(u, mean, spread)
        return np.exp(log_q) * (log_q - norm.logpdf(u, 0.0, prior_sd))

    expected, _ = quad(integrand, mean - 12 * spread, mean + 12 * spread, epsabs=1e-12)

    value = kl_inducing(np.array([[mean]]), [np.array([[spread]])], location, p)

    assert value == pytest.approx(expected, rel=1e-6)
