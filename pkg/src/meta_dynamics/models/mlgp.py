"""
Meta-learning GP dynamics model.

A sparse variational GP over augmented inputs (x, c, h) where h is a
per-task latent vector. Training maximises the stochastic ELBO

    scale · Σ E_q[log N(y | f, E)] − KL[q(H) || p(H)] − KL[q(U) || p(U)]

with one reparameterised latent sample per task per step and the
expectation over f in closed form. With ``latent_dim == 0`` every latent
branch is skipped and the model is the plain SGP baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Collection, Mapping, Optional, Sequence

import numpy as np
from tqdm.auto import trange

from .. import autodiff as ad
from ..errors import NonFiniteError, ShapeError, UnknownTaskError
from .data import MultiTaskDataset, Standardizer, TaskData
from .kernel import KernelParams, kernel_diag_node, kernel_matrix_node, kernel_matrix
from .latent import LatentPosterior, TaskPosterior, kl_latent_node, sample_node
from .svgp import (
    LOG_2PI,
    InducingSet,
    OutputVariational,
    conditional,
    factor_node,
    kl_inducing_node,
)

logger = logging.getLogger(__name__)

NOISE_INIT = 0.01
GROUPS = ("hyperparameters", "inducing", "variational", "latent")
TRAINABLE_MODES = {"all": GROUPS, "latent": ("latent",)}
PREDICTION_MODES = ("mean-latent", "sample")


def parameter_group(name: str) -> str:
    prefix = name.split(".", 1)[0]
    if prefix in ("kernel", "likelihood"):
        return "hyperparameters"
    if prefix in ("inducing", "variational", "latent"):
        return prefix
    raise KeyError(f"parameter {name!r} belongs to no group")


@dataclass
class MlgpModel:
    state_dim: int
    control_dim: int
    latent_dim: int
    kernel: KernelParams
    log_noise: np.ndarray
    inducing: InducingSet
    variational: OutputVariational
    latents: LatentPosterior
    standardizer: Standardizer
    rng_state: Optional[dict] = None
    _cache: Optional[tuple[np.ndarray, list[np.ndarray]]] = field(
        default=None, init=False, repr=False, compare=False
    )

    @classmethod
    def initialize(
        cls,
        dataset: MultiTaskDataset,
        latent_dim: int,
        num_inducing: int,
        rng: np.random.Generator,
        noise_variance: float = NOISE_INIT,
    ) -> "MlgpModel":
        """Fit standardization on ``dataset`` and set every q to its prior."""
        if not dataset.blocks:
            raise ShapeError("cannot initialise a model from an empty dataset")
        standardizer = Standardizer.fit(dataset.blocks)
        state_dim, control_dim = dataset.state_dim, dataset.control_dim
        inputs = np.vstack(
            [
                np.hstack([standardizer.states(block.states), standardizer.controls(block.controls)])
                for block in dataset.blocks
            ]
        )
        observed = InducingSet.from_inputs(inputs, num_inducing, rng).locations
        locations = np.hstack([observed, rng.standard_normal((observed.shape[0], latent_dim))])
        kernel = KernelParams.initial(state_dim + control_dim + latent_dim)
        kzz_factor, _ = ad.jittered_cholesky(kernel_matrix(locations, None, kernel))
        latents = LatentPosterior(latent_dim)
        latents.ensure(dataset.task_ids)
        return cls(
            state_dim=state_dim,
            control_dim=control_dim,
            latent_dim=latent_dim,
            kernel=kernel,
            log_noise=np.full(state_dim, np.log(noise_variance)),
            inducing=InducingSet(locations),
            variational=OutputVariational.prior_matched(kzz_factor, state_dim),
            latents=latents,
            standardizer=standardizer,
        )

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.control_dim + self.latent_dim

    @property
    def noise_variance(self) -> np.ndarray:
        return np.exp(self.log_noise)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {
            "kernel.log_variance": np.array([[self.kernel.log_variance]]),
            "kernel.log_lengthscales": self.kernel.log_lengthscales[None, :].copy(),
            "likelihood.log_noise": self.log_noise[None, :].copy(),
            "inducing.locations": self.inducing.locations.copy(),
            "variational.means": self.variational.means.copy(),
        }
        for output in range(self.state_dim):
            params[f"variational.factor.{output}"] = self.variational.raw_factors[output].copy()
        if self.latent_dim:
            params["latent.means"] = self.latents.means.copy()
            params["latent.log_stds"] = self.latents.log_stds.copy()
        return params

    def with_parameters(self, params: Mapping[str, np.ndarray]) -> "MlgpModel":
        """A new model carrying ``params``; names not given keep current values."""
        merged = {**self.parameters(), **params}
        latents = self.latents.copy()
        if self.latent_dim:
            latents.means = np.array(merged["latent.means"], dtype=np.float64)
            latents.log_stds = np.array(merged["latent.log_stds"], dtype=np.float64)
        return replace(
            self,
            kernel=KernelParams(
                float(merged["kernel.log_variance"][0, 0]),
                np.array(merged["kernel.log_lengthscales"][0], dtype=np.float64),
            ),
            log_noise=np.array(merged["likelihood.log_noise"][0], dtype=np.float64),
            inducing=InducingSet(np.array(merged["inducing.locations"])),
            variational=OutputVariational(
                np.array(merged["variational.means"], dtype=np.float64),
                np.stack([merged[f"variational.factor.{d}"] for d in range(self.state_dim)]).astype(np.float64),
            ),
            latents=latents,
        )

    def copy(self) -> "MlgpModel":
        return self.with_parameters({})

    def predictive_factors(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """Cholesky of K_ZZ and every C_d, computed once per parameter set."""
        if self._cache is None:
            kzz = kernel_matrix(self.inducing.locations, None, self.kernel)
            kzz_factor, _ = ad.jittered_cholesky(kzz)
            self._cache = (kzz_factor, [self.variational.factor(d) for d in range(self.state_dim)])
        return self._cache


# -- ELBO ---------------------------------------------------------------------


@dataclass(frozen=True)
class ElboTerms:
    elbo: float
    expected_log_likelihood: float
    kl_inducing: float
    kl_latent: float


def _parameter_nodes(
    tape: ad.Tape, model: MlgpModel, trainable: Collection[str]
) -> dict[str, ad.Node]:
    return {
        name: tape.variable(value, name) if parameter_group(name) in trainable else tape.constant(value)
        for name, value in model.parameters().items()
    }


def _augmented_inputs(
    tape: ad.Tape,
    model: MlgpModel,
    nodes: Mapping[str, ad.Node],
    blocks: Sequence[TaskData],
    latent_noise: Mapping[str, np.ndarray],
) -> ad.Node:
    parts = []
    samples: dict[str, ad.Node] = {}
    for block in blocks:
        observed = tape.constant(np.hstack([block.states, block.controls]))
        if not model.latent_dim:
            parts.append(observed)
            continue
        if block.task_id not in samples:
            row = model.latents.index(block.task_id)
            samples[block.task_id] = sample_node(
                nodes["latent.means"][row, :],
                nodes["latent.log_stds"][row, :],
                latent_noise[block.task_id],
            )
        latent = ad.broadcast_row(samples[block.task_id], len(block))
        parts.append(ad.concat([observed, latent], axis=1))
    return ad.concat(parts, axis=0)


def _elbo_nodes(
    tape: ad.Tape,
    model: MlgpModel,
    nodes: Mapping[str, ad.Node],
    blocks: Sequence[TaskData],
    total_transitions: int,
    latent_noise: Mapping[str, np.ndarray],
    kl_tasks: Sequence[str],
) -> dict[str, ad.Node]:
    """Build the ELBO on ``tape`` from standardized blocks."""
    inputs = _augmented_inputs(tape, model, nodes, blocks, latent_noise)
    targets = np.vstack([block.targets for block in blocks])
    rows = targets.shape[0]

    log_variance = nodes["kernel.log_variance"]
    log_lengthscales = nodes["kernel.log_lengthscales"]
    locations = nodes["inducing.locations"]
    kzz_factor = ad.cholesky(kernel_matrix_node(locations, None, log_variance, log_lengthscales))
    kzx = kernel_matrix_node(locations, inputs, log_variance, log_lengthscales)
    factors = [factor_node(nodes[f"variational.factor.{d}"]) for d in range(model.state_dim)]
    mean, variance = conditional(
        kzz_factor, kzx, kernel_diag_node(rows, log_variance), nodes["variational.means"], factors
    )

    log_noise = ad.broadcast_row(nodes["likelihood.log_noise"], rows)
    noise = ad.exp(log_noise)
    expected = ad.sum_(
        -0.5 * LOG_2PI - 0.5 * log_noise - 0.5 * (ad.square(targets - mean) + variance) / noise
    )
    kl_u = kl_inducing_node(kzz_factor, nodes["variational.means"], factors)
    if model.latent_dim and kl_tasks:
        indices = [model.latents.index(task_id) for task_id in kl_tasks]
        kl_h = kl_latent_node(
            ad.concat([nodes["latent.means"][i, :] for i in indices], axis=0),
            ad.concat([nodes["latent.log_stds"][i, :] for i in indices], axis=0),
        )
    else:
        kl_h = tape.constant(0.0)
    scale = total_transitions / rows
    return {
        "elbo": scale * expected - kl_h - kl_u,
        "expected_log_likelihood": expected,
        "kl_inducing": kl_u,
        "kl_latent": kl_h,
    }


def _check_tasks(model: MlgpModel, task_ids: Collection[str]) -> None:
    for task_id in task_ids:
        if task_id not in model.latents:
            raise UnknownTaskError(f"task {task_id!r} has no latent posterior")


def draw_latent_noise(
    model: MlgpModel, blocks: Sequence[TaskData], rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """One standard-normal ε per distinct task in ``blocks``."""
    return {
        task_id: rng.standard_normal(model.latent_dim)
        for task_id in dict.fromkeys(block.task_id for block in blocks)
    }


def elbo(
    model: MlgpModel,
    blocks: Sequence[TaskData],
    rng: Optional[np.random.Generator] = None,
    *,
    total_transitions: Optional[int] = None,
    latent_noise: Optional[Mapping[str, np.ndarray]] = None,
    kl_tasks: Optional[Sequence[str]] = None,
) -> ElboTerms:
    """ELBO of raw (natural-unit) blocks, rescaled to ``total_transitions``."""
    terms, _ = elbo_gradients(
        model,
        blocks,
        rng,
        trainable=(),
        total_transitions=total_transitions,
        latent_noise=latent_noise,
        kl_tasks=kl_tasks,
    )
    return terms


def elbo_gradients(
    model: MlgpModel,
    blocks: Sequence[TaskData],
    rng: Optional[np.random.Generator] = None,
    *,
    trainable: Collection[str] = GROUPS,
    total_transitions: Optional[int] = None,
    latent_noise: Optional[Mapping[str, np.ndarray]] = None,
    kl_tasks: Optional[Sequence[str]] = None,
) -> tuple[ElboTerms, dict[str, np.ndarray]]:
    """ELBO terms and the gradient of the ELBO for every parameter in ``trainable`` groups."""
    if not blocks:
        raise ShapeError("ELBO needs a non-empty minibatch")
    _check_tasks(model, {block.task_id for block in blocks})
    if latent_noise is None:
        latent_noise = draw_latent_noise(model, blocks, rng or np.random.default_rng())
    standardized = [model.standardizer.block(block) for block in blocks]
    tape = ad.Tape()
    nodes = _parameter_nodes(tape, model, trainable)
    terms = _elbo_nodes(
        tape,
        model,
        nodes,
        standardized,
        total_transitions or sum(len(block) for block in blocks),
        latent_noise,
        list(dict.fromkeys(block.task_id for block in blocks)) if kl_tasks is None else kl_tasks,
    )
    values = ElboTerms(**{name: node.item() for name, node in terms.items()})
    grads = tape.backward(terms["elbo"])
    return values, grads


# -- training -------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    trainable: str = "all"
    learning_rate: float = 1e-2
    progress: bool = False

    def __post_init__(self) -> None:
        if self.trainable not in TRAINABLE_MODES:
            raise ValueError(f"trainable must be one of {sorted(TRAINABLE_MODES)}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


@dataclass
class FitResult:
    model: MlgpModel
    losses: list[float]


def fit(model: MlgpModel, dataset: MultiTaskDataset, config: FitConfig = FitConfig()) -> FitResult:
    """Adam on −ELBO over minibatches of whole blocks (trajectories).

    Standardization statistics are the model's own and never change here.
    """
    if not dataset.blocks:
        raise ShapeError("cannot fit on an empty dataset")
    _check_tasks(model, dataset.task_ids)
    rng = np.random.default_rng(config.seed)
    groups = TRAINABLE_MODES[config.trainable]
    blocks = [model.standardizer.block(block) for block in dataset.blocks]
    total = dataset.transition_count
    kl_tasks = dataset.task_ids
    adam = ad.AdamConfig(learning_rate=config.learning_rate)

    current = model
    params = model.parameters()
    state = ad.AdamState()
    losses: list[float] = []
    for step in trange(config.steps, desc="fit", disable=not config.progress, leave=False):
        if config.batch_size >= len(blocks):
            batch = blocks
        else:
            picks = np.sort(rng.choice(len(blocks), size=config.batch_size, replace=False))
            batch = [blocks[i] for i in picks]
        noise = draw_latent_noise(current, batch, rng)
        tape = ad.Tape()
        nodes = _parameter_nodes(tape, current, groups)
        try:
            terms = _elbo_nodes(tape, current, nodes, batch, total, noise, kl_tasks)
            loss = -terms["elbo"]
            grads = tape.backward(loss)
            params, state = ad.adam_step(params, grads, state, adam)
        except NonFiniteError as exc:
            recent = ", ".join(f"{value:.4g}" for value in losses[-5:])
            raise NonFiniteError(
                f"training diverged at step {step} ({exc}); recent losses: [{recent}]"
            ) from exc
        losses.append(loss.item())
        current = current.with_parameters(params)

    if losses:
        logger.debug("fit: %d steps, loss %.4f -> %.4f", len(losses), losses[0], losses[-1])
    current.rng_state = rng.bit_generator.state
    return FitResult(current, losses)


@dataclass(frozen=True)
class InferenceConfig:
    steps: int = 100
    learning_rate: float = 0.05
    seed: int = 0


def infer_latent(
    model: MlgpModel,
    fragment: MultiTaskDataset,
    task_id: str,
    config: InferenceConfig = InferenceConfig(),
    initial: Optional[TaskPosterior] = None,
) -> TaskPosterior:
    """Fit q(h) for one task on its observations, every other parameter frozen."""
    start = initial if initial is not None else TaskPosterior.prior(model.latent_dim)
    observed = fragment.for_tasks([task_id])
    if not model.latent_dim or observed.transition_count == 0:
        return start
    latents = LatentPosterior(model.latent_dim, [task_id])
    latents.set(task_id, start)
    work = replace(model.copy(), latents=latents)
    result = fit(
        work,
        observed,
        FitConfig(
            steps=config.steps,
            batch_size=len(observed),
            seed=config.seed,
            trainable="latent",
            learning_rate=config.learning_rate,
        ),
    )
    return result.model.latents.get(task_id)


# -- prediction -----------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    """Diagonal Gaussian over the next state (or the target, for regression tasks)."""

    mean: np.ndarray
    variance: np.ndarray


def latent_input(
    model: MlgpModel,
    posterior: Optional[TaskPosterior],
    mode: str = "mean-latent",
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    if mode not in PREDICTION_MODES:
        raise ValueError(f"mode must be one of {PREDICTION_MODES}, got {mode!r}")
    posterior = posterior if posterior is not None else TaskPosterior.prior(model.latent_dim)
    if mode == "sample":
        if rng is None:
            raise ValueError("mode='sample' needs an rng")
        return posterior.sample(rng)
    return posterior.mean.copy()


def predictive_nodes(
    model: MlgpModel,
    states: ad.Node,
    controls: ad.Node,
    latent: np.ndarray,
) -> tuple[ad.Node, ad.Node]:
    """Mean and variance (noise included) of the state change, natural units."""
    tape = states.tape
    rows = states.shape[0]
    stats = model.standardizer
    parts = [(states - np.tile(stats.state_mean, (rows, 1))) / np.tile(stats.state_std, (rows, 1))]
    if model.control_dim:
        parts.append(
            (controls - np.tile(stats.control_mean, (rows, 1))) / np.tile(stats.control_std, (rows, 1))
        )
    if model.latent_dim:
        parts.append(tape.constant(np.tile(latent, (rows, 1))))
    inputs = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]

    kzz_factor, factors = model.predictive_factors()
    log_variance, log_lengthscales = model.kernel.nodes(tape)
    kzx = kernel_matrix_node(
        tape.constant(model.inducing.locations), inputs, log_variance, log_lengthscales
    )
    mean, variance = conditional(
        tape.constant(kzz_factor),
        kzx,
        kernel_diag_node(rows, log_variance),
        tape.constant(model.variational.means),
        [tape.constant(factor) for factor in factors],
    )
    scale = np.tile(stats.target_std, (rows, 1))
    noise = np.tile(model.noise_variance, (rows, 1))
    return mean * scale, (variance + noise) * (scale * scale)


def predict_delta(
    model: MlgpModel,
    states: np.ndarray,
    controls: np.ndarray,
    posterior: Optional[TaskPosterior] = None,
    mode: str = "mean-latent",
    rng: Optional[np.random.Generator] = None,
) -> Prediction:
    """Predictive distribution of y = x_{t+1} − x_t for a batch of inputs."""
    states = ad.as_matrix(states, "states")
    controls = np.asarray(controls, dtype=np.float64).reshape(states.shape[0], model.control_dim)
    if states.shape[1] != model.state_dim:
        raise ShapeError(f"states have {states.shape[1]} columns, model expects {model.state_dim}")
    tape = ad.Tape()
    mean, variance = predictive_nodes(
        model,
        tape.constant(states),
        tape.constant(controls) if model.control_dim else tape.constant(np.zeros((states.shape[0], 1))),
        latent_input(model, posterior, mode, rng),
    )
    return Prediction(mean.value, variance.value)


def predict(
    model: MlgpModel,
    state: np.ndarray,
    control: np.ndarray,
    posterior: Optional[TaskPosterior] = None,
    mode: str = "mean-latent",
    rng: Optional[np.random.Generator] = None,
) -> Prediction:
    """One-step Gaussian over x_{t+1}: x + μ_y with variance var_y + noise."""
    state = np.asarray(state, dtype=np.float64).ravel()
    delta = predict_delta(
        model, state[None, :], np.asarray(control, dtype=np.float64).reshape(1, -1), posterior, mode, rng
    )
    return Prediction(state + delta.mean[0], delta.variance[0])
