from __future__ import annotations

import numpy as np
import pytest

from meta_dynamics import autodiff as ad
from meta_dynamics.errors import ShapeError
from meta_dynamics.models.kernel import KernelParams, k, kernel_diag, kernel_matrix, kernel_matrix_node

from helpers import numeric_gradient


def params(dims: int = 3) -> KernelParams:
    return KernelParams(np.log(1.7), np.log(np.linspace(0.5, 2.0, dims)))


def test_single_pair_matches_the_closed_form() -> None:
    x_i = np.array([0.1, -0.3, 0.8])
    x_j = np.array([0.4, 0.2, -0.5])
    p = params()

    expected = 1.7 * np.exp(-0.5 * np.sum(((x_i - x_j) / p.lengthscales) ** 2))

    assert k(x_i, x_j, p) == pytest.approx(expected, rel=1e-12)
    assert k(x_i, x_i, p) == pytest.approx(1.7, rel=1e-12)


def test_gram_matrix_is_symmetric_with_exact_diagonal() -> None:
    points = np.random.default_rng(0).standard_normal((12, 3))
    p = params()

    gram = kernel_matrix(points, None, p)

    np.testing.assert_array_equal(gram, gram.T)
    np.testing.assert_allclose(np.diag(gram), np.full(12, p.variance), rtol=1e-14)
    assert np.linalg.eigvalsh(gram).min() > -1e-10


def test_cross_covariance_matches_pairwise_evaluation() -> None:
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    p = params()

    cross = kernel_matrix(a, b, p)

    expected = np.array([[k(row_a, row_b, p) for row_b in b] for row_a in a])
    np.testing.assert_allclose(cross, expected, rtol=1e-12)
    np.testing.assert_array_equal(kernel_diag(a, p), np.full(4, p.variance))


def test_hyperparameter_gradients_match_finite_differences() -> None:
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 3))
    weights = rng.standard_normal((4, 3))
    start = params().log_lengthscales[None, :]

    def objective(log_lengthscales: np.ndarray, variable: bool) -> tuple[float, np.ndarray]:
        tape = ad.Tape()
        node = tape.variable(log_lengthscales, "ell") if variable else tape.constant(log_lengthscales)
        gram = kernel_matrix_node(tape.constant(a), tape.constant(b), tape.constant(0.2), node)
        out = ad.sum_(gram * weights)
        return out.item(), tape.backward(out)["ell"] if variable else np.empty(0)

    _, analytic = objective(start, True)
    numeric = numeric_gradient(lambda v: objective(v, False)[0], start)

    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-9)


def test_input_width_must_match_lengthscales() -> None:
    with pytest.raises(ShapeError):
        k(np.zeros(2), np.zeros(2), params(3))
    with pytest.raises(ShapeError):
        kernel_matrix(np.zeros((2, 2)), None, params(3))
