"""Full GP regression over pooled (x, c) inputs, one independent GP per output."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .. import autodiff as ad
from ..errors import NonFiniteError, ShapeError
from .data import MultiTaskDataset, Standardizer
from .kernel import KernelParams, kernel_matrix, kernel_matrix_node
from .mlgp import NOISE_INIT, Prediction

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ExactGpConfig:
    steps: int = 300
    learning_rate: float = 5e-2
    max_points: int = 600
    seed: int = 0


@dataclass
class ExactGp:
    """Hyperparameters plus the standardized training set they condition on."""

    kernel: KernelParams
    log_noise: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    standardizer: Standardizer

    @property
    def noise_variance(self) -> np.ndarray:
        return np.exp(self.log_noise)


def log_marginal_likelihood_node(
    inputs: ad.Node,
    targets: np.ndarray,
    log_variance: ad.Node,
    log_lengthscales: ad.Node,
    log_noise: ad.Node,
) -> ad.Node:
    """Σ_d log N(y_d | 0, K + σ_d² I)."""
    rows = inputs.shape[0]
    kernel = kernel_matrix_node(inputs, None, log_variance, log_lengthscales)
    identity = np.eye(rows)
    total = None
    for output in range(targets.shape[1]):
        factor = ad.cholesky(kernel + ad.exp(log_noise[0, output]) * identity)
        whitened = ad.solve_triangular(factor, targets[:, output : output + 1])
        term = -0.5 * ad.sum_(ad.square(whitened)) - 0.5 * ad.logdet_cholesky(factor) - 0.5 * rows * LOG_2PI
        total = term if total is None else total + term
    return total


def log_marginal_likelihood(gp: ExactGp) -> float:
    tape = ad.Tape()
    log_variance, log_lengthscales = gp.kernel.nodes(tape)
    return log_marginal_likelihood_node(
        tape.constant(gp.inputs), gp.targets, log_variance, log_lengthscales, tape.constant(gp.log_noise)
    ).item()


def fit_exact_gp(
    dataset: MultiTaskDataset,
    config: ExactGpConfig = ExactGpConfig(),
    standardizer: Optional[Standardizer] = None,
) -> ExactGp:
    """Adam on the log marginal likelihood of every block pooled together.

    Above ``max_points`` rows a seeded subset is used.
    """
    if not dataset.blocks:
        raise ShapeError("cannot fit an exact GP on an empty dataset")
    standardizer = standardizer or Standardizer.fit(dataset.blocks)
    blocks = [standardizer.block(block) for block in dataset.blocks]
    inputs = np.vstack([np.hstack([block.states, block.controls]) for block in blocks])
    targets = np.vstack([block.targets for block in blocks])
    if inputs.shape[0] > config.max_points:
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(inputs.shape[0], size=config.max_points, replace=False))
        inputs, targets = inputs[keep], targets[keep]

    params = {
        "kernel.log_variance": np.zeros((1, 1)),
        "kernel.log_lengthscales": np.zeros((1, inputs.shape[1])),
        "likelihood.log_noise": np.full((1, targets.shape[1]), np.log(NOISE_INIT)),
    }
    state = ad.AdamState()
    adam = ad.AdamConfig(learning_rate=config.learning_rate)
    for step in range(config.steps):
        tape = ad.Tape()
        nodes = {name: tape.variable(value, name) for name, value in params.items()}
        try:
            objective = log_marginal_likelihood_node(
                tape.constant(inputs),
                targets,
                nodes["kernel.log_variance"],
                nodes["kernel.log_lengthscales"],
                nodes["likelihood.log_noise"],
            )
            grads = tape.backward(-objective)
            params, state = ad.adam_step(params, grads, state, adam)
        except NonFiniteError as exc:
            raise NonFiniteError(f"exact GP training diverged at step {step}: {exc}") from exc
    logger.debug("exact GP fitted on %d points", inputs.shape[0])
    return ExactGp(
        kernel=KernelParams(float(params["kernel.log_variance"][0, 0]), params["kernel.log_lengthscales"][0]),
        log_noise=params["likelihood.log_noise"][0].copy(),
        inputs=inputs,
        targets=targets,
        standardizer=standardizer,
    )


def posterior(gp: ExactGp, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Latent-function mean and variance (no noise) at standardized ``points``."""
    points = ad.as_matrix(points, "points")
    cross = kernel_matrix(gp.inputs, points, gp.kernel)
    gram = kernel_matrix(gp.inputs, None, gp.kernel)
    means, variances = [], []
    for output in range(gp.targets.shape[1]):
        noisy = gram + gp.noise_variance[output] * np.eye(gram.shape[0])
        factor, _ = ad.jittered_cholesky(noisy)
        alpha = sla.cho_solve((factor, True), gp.targets[:, output])
        projected = sla.solve_triangular(factor, cross, lower=True)
        means.append(cross.T @ alpha)
        variances.append(gp.kernel.variance - np.sum(projected**2, axis=0))
    return np.column_stack(means), np.maximum(np.column_stack(variances), 0.0)


def predict_delta(gp: ExactGp, states: np.ndarray, controls: np.ndarray) -> Prediction:
    """Predictive over y = x_{t+1} − x_t in natural units, noise included."""
    stats = gp.standardizer
    states = ad.as_matrix(states, "states")
    controls = np.asarray(controls, dtype=np.float64).reshape(states.shape[0], -1)
    mean, variance = posterior(gp, np.hstack([stats.states(states), stats.controls(controls)]))
    return Prediction(
        stats.restore_targets(mean),
        (variance + gp.noise_variance) * stats.target_std**2,
    )
