from __future__ import annotations

import numpy as np
import pytest

from meta_dynamics import autodiff as ad
from meta_dynamics.errors import CholeskyError, NonFiniteError, ShapeError, TapeError

from helpers import numeric_gradient, random_spd


def gradient_of(build, value: np.ndarray) -> np.ndarray:
    tape = ad.Tape()
    out = build(tape.variable(value, "x"))
    return tape.backward(out)["x"]


def value_of(build, value: np.ndarray) -> float:
    tape = ad.Tape()
    return build(tape.constant(value)).item()


@pytest.mark.parametrize(
    "build",
    [
        lambda x: ad.sum_(ad.exp(x) * ad.sin(x) - ad.cos(x) / (2.0 + ad.square(x))),
        lambda x: ad.sum_(ad.tanh(x @ x.T)),
        lambda x: ad.sum_(ad.log(1.0 + ad.square(x)) + ad.sqrt(3.0 + x)),
        lambda x: ad.sum_(ad.sum_(x, axis=0) * ad.sum_(x, axis=0)) + ad.sum_(ad.square(x[1:, :])),
        lambda x: ad.sum_(ad.broadcast_col(ad.sum_(x, axis=1), 4) * ad.concat([x, -x], axis=1)),
    ],
)
def test_elementwise_and_shape_ops_match_finite_differences(build) -> None:
    rng = np.random.default_rng(0)
    value = 0.5 * rng.standard_normal((3, 2))

    analytic = gradient_of(build, value)
    numeric = numeric_gradient(lambda v: value_of(build, v), value)

    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_cholesky_solve_and_logdet_adjoints_match_finite_differences() -> None:
    rng = np.random.default_rng(1)
    base = random_spd(4, rng)
    rhs = rng.standard_normal((4, 2))
    direction = rng.standard_normal((4, 4))
    direction = direction + direction.T

    def build(theta: ad.Node) -> ad.Node:
        matrix = theta * direction + base
        factor = ad.cholesky(matrix)
        solved = ad.solve_triangular(factor, ad.solve_triangular(factor, rhs), transpose=True)
        return ad.sum_(solved * rhs) + ad.logdet_cholesky(factor)

    theta = np.array([[0.3]])
    analytic = gradient_of(build, theta)
    numeric = numeric_gradient(lambda v: value_of(build, v), theta)

    np.testing.assert_allclose(analytic, numeric, rtol=1e-5)


def test_logdet_of_cholesky_factor_matches_numpy() -> None:
    matrix = random_spd(5, np.random.default_rng(2))
    tape = ad.Tape()

    logdet = ad.logdet_cholesky(ad.cholesky(tape.constant(matrix))).item()

    assert logdet == pytest.approx(np.linalg.slogdet(matrix)[1], rel=1e-10)


def test_jittered_cholesky_adds_only_what_is_needed() -> None:
    singular = np.ones((3, 3))

    factor, jitter = ad.jittered_cholesky(singular)
    clean_factor, clean_jitter = ad.jittered_cholesky(np.eye(3))

    assert jitter > 0.0
    assert jitter <= 1e-2
    np.testing.assert_allclose(factor @ factor.T, singular + jitter * np.eye(3), atol=1e-12)
    assert clean_jitter == 0.0
    np.testing.assert_allclose(clean_factor, np.eye(3))


def test_jittered_cholesky_gives_up_on_indefinite_matrices() -> None:
    with pytest.raises(CholeskyError):
        ad.jittered_cholesky(np.diag([1.0, -1.0]))


def test_tape_is_single_use() -> None:
    tape = ad.Tape()
    x = tape.variable(np.ones((1, 1)), "x")
    out = ad.sum_(ad.square(x))
    tape.backward(out)

    with pytest.raises(TapeError):
        tape.backward(out)
    with pytest.raises(TapeError):
        ad.exp(x)


def test_mixing_tapes_is_rejected() -> None:
    first, second = ad.Tape(), ad.Tape()

    with pytest.raises(TapeError):
        first.variable(1.0, "a") + second.variable(1.0, "b")


def test_backward_needs_a_scalar_output() -> None:
    tape = ad.Tape()
    x = tape.variable(np.ones((2, 2)), "x")

    with pytest.raises(ShapeError):
        tape.backward(x * 2.0)


def test_non_finite_values_are_refused() -> None:
    tape = ad.Tape()

    with pytest.raises(NonFiniteError):
        tape.constant([np.nan])
    with pytest.raises(NonFiniteError):
        ad.log(tape.constant([[-1.0]]))


def test_unused_variables_get_zero_gradients() -> None:
    tape = ad.Tape()
    used = tape.variable(np.array([[2.0]]), "used")
    unused = tape.variable(np.ones((2, 3)), "unused")

    grads = tape.backward(ad.square(used))

    assert grads["used"][0, 0] == pytest.approx(4.0)
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 3)))
    assert unused.shape == (2, 3)


def test_adam_minimises_a_quadratic_and_leaves_inputs_alone() -> None:
    target = np.array([[1.0, -2.0]])
    params = {"w": np.zeros((1, 2)), "frozen": np.ones((1, 1))}
    original = params["w"].copy()
    state = ad.AdamState()
    config = ad.AdamConfig(learning_rate=0.1)

    current = params
    for _ in range(1000):
        current, state = ad.adam_step(current, {"w": 2.0 * (current["w"] - target)}, state, config)

    np.testing.assert_allclose(current["w"], target, atol=1e-2)
    np.testing.assert_array_equal(params["w"], original)
    np.testing.assert_array_equal(current["frozen"], np.ones((1, 1)))
    assert state.step == 1000


def test_first_adam_step_moves_each_coordinate_by_the_learning_rate() -> None:
    params, _ = ad.adam_step(
        {"w": np.zeros((1, 3))},
        {"w": np.array([[0.5, -3.0, 100.0]])},
        ad.AdamState(),
        ad.AdamConfig(learning_rate=0.01),
    )

    np.testing.assert_allclose(params["w"], [[-0.01, 0.01, -0.01]], rtol=1e-6)


def test_adam_rejects_bad_gradients() -> None:
    with pytest.raises(NonFiniteError):
        ad.adam_step({"w": np.zeros((1, 1))}, {"w": np.array([[np.inf]])}, ad.AdamState())
    with pytest.raises(ShapeError):
        ad.adam_step({"w": np.zeros((1, 1))}, {"w": np.zeros((1, 2))}, ad.AdamState())
