"""
Receding-horizon planning through a learned or simulated model.

The expected cost of an open-loop control sequence is estimated with S
particles pushed through the one-step Gaussian predictive. The noise draws
are fixed for a whole planning call, so the objective is a deterministic,
differentiable function of the controls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..envs.base import SimulatedSystem
from ..errors import ConfigError, DivergenceError, NonFiniteError
from ..models.data import Trajectory
from .dynamics import Dynamics

logger = logging.getLogger(__name__)

CostFn = Callable[[ad.Node], ad.Node]
OPTIMIZERS = ("adam", "cem")
TANH_LIMIT = 1.0 - 1e-9


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    iterations: int = 50
    restarts: int = 3
    particles: int = 10
    learning_rate: float = 0.1
    optimizer: str = "adam"
    warm_start: bool = True
    population: int = 64
    elites: int = 8

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.particles < 1 or self.restarts < 1:
            raise ConfigError("horizon, particles and restarts must all be >= 1")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 1 <= self.elites <= self.population:
            raise ConfigError("need 1 <= elites <= population")


@dataclass(frozen=True)
class Plan:
    controls: np.ndarray
    cost: float
    initial_cost: float
    state_means: np.ndarray
    state_variances: np.ndarray


@dataclass(frozen=True)
class Rollout:
    cost: float
    state_means: np.ndarray
    state_variances: np.ndarray


def _rollout_nodes(
    dynamics: Dynamics,
    x0: np.ndarray,
    controls: ad.Node,
    cost_fn: CostFn,
    noise: np.ndarray,
) -> tuple[ad.Node, list[ad.Node]]:
    tape = controls.tape
    particles = noise.shape[1]
    states = tape.constant(np.tile(x0, (particles, 1)))
    total = None
    trace = []
    for t in range(noise.shape[0]):
        mean, variance = dynamics.predict_nodes(states, ad.broadcast_row(controls[t, :], particles))
        states = mean if dynamics.deterministic else mean + ad.sqrt(variance) * noise[t]
        step = ad.sum_(cost_fn(states))
        total = step if total is None else total + step
        trace.append(states)
    return total / float(particles), trace


def rollout_cost(
    dynamics: Dynamics,
    x0: np.ndarray,
    controls: np.ndarray,
    cost_fn: CostFn,
    noise: np.ndarray,
) -> Rollout:
    """J = mean over particles of Σ_{t=1..H} ℓ(x_t), with per-step particle moments."""
    tape = ad.Tape()
    total, trace = _rollout_nodes(
        dynamics, np.asarray(x0, dtype=np.float64), tape.constant(controls), cost_fn, noise
    )
    return Rollout(
        total.item(),
        np.vstack([states.value.mean(axis=0) for states in trace]),
        np.vstack([states.value.var(axis=0) for states in trace]),
    )


def rollout_costs(
    dynamics: Dynamics,
    x0: np.ndarray,
    candidates: np.ndarray,
    cost_fn: CostFn,
    noise: np.ndarray,
) -> np.ndarray:
    """Expected cost of each of P candidate sequences (P x H x K), evaluated as one batch."""
    count = candidates.shape[0]
    horizon, particles, _ = noise.shape
    states = np.tile(np.asarray(x0, dtype=np.float64), (count * particles, 1))
    totals = np.zeros(count)
    for t in range(horizon):
        tape = ad.Tape()
        current = tape.constant(states)
        control = tape.constant(np.repeat(candidates[:, t, :], particles, axis=0))
        mean, variance = dynamics.predict_nodes(current, control)
        if not dynamics.deterministic:
            mean = mean + ad.sqrt(variance) * np.tile(noise[t], (count, 1))
        states = mean.value
        totals += cost_fn(mean).value[:, 0].reshape(count, particles).mean(axis=1)
    return totals


def _initial_sequences(
    config: MpcConfig,
    control_dim: int,
    center: np.ndarray,
    scale: np.ndarray,
    rng: np.random.Generator,
    previous: Optional[Plan],
) -> list[np.ndarray]:
    horizon = config.horizon
    if previous is not None and config.warm_start:
        first = np.vstack([previous.controls[1:], previous.controls[-1:]])
    else:
        first = np.tile(center, (horizon, 1))
    starts = [first]
    for _ in range(config.restarts - 1):
        starts.append(center + scale * np.tanh(rng.standard_normal((horizon, control_dim))))
    return starts


def _optimize_adam(
    dynamics: Dynamics,
    x0: np.ndarray,
    cost_fn: CostFn,
    noise: np.ndarray,
    starts: list[np.ndarray],
    center: np.ndarray,
    scale: np.ndarray,
    config: MpcConfig,
) -> tuple[np.ndarray, float, float]:
    adam = ad.AdamConfig(learning_rate=config.learning_rate)
    centers = np.tile(center, (config.horizon, 1))
    scales = np.tile(scale, (config.horizon, 1))
    best_controls, best_cost, initial_cost = None, np.inf, np.nan
    for restart, start in enumerate(starts):
        params = {"u": np.arctanh(np.clip((start - centers) / scales, -TANH_LIMIT, TANH_LIMIT))}
        state = ad.AdamState()
        for iteration in range(config.iterations + 1):
            tape = ad.Tape()
            controls = centers + scales * ad.tanh(tape.variable(params["u"], "u"))
            try:
                total, _ = _rollout_nodes(dynamics, x0, controls, cost_fn, noise)
            except NonFiniteError as exc:
                logger.warning("restart %d stopped at iteration %d: %s", restart, iteration, exc)
                break
            value = total.item()
            if restart == 0 and iteration == 0:
                initial_cost = value
            if value < best_cost:
                best_cost, best_controls = value, controls.value.copy()
            if iteration == config.iterations:
                break
            try:
                params, state = ad.adam_step(params, tape.backward(total), state, adam)
            except NonFiniteError as exc:
                logger.warning("restart %d stopped at iteration %d: %s", restart, iteration, exc)
                break
    if best_controls is None:
        raise DivergenceError("every planning restart produced a non-finite cost")
    return best_controls, best_cost, initial_cost


def _optimize_cem(
    dynamics: Dynamics,
    x0: np.ndarray,
    cost_fn: CostFn,
    noise: np.ndarray,
    starts: list[np.ndarray],
    lower: np.ndarray,
    upper: np.ndarray,
    config: MpcConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float]:
    best_controls, best_cost, initial_cost = None, np.inf, np.nan
    for restart, start in enumerate(starts):
        mean = start.copy()
        std = np.tile(0.5 * (upper - lower), (config.horizon, 1))
        for iteration in range(max(config.iterations, 1)):
            draws = mean + std * rng.standard_normal((config.population,) + mean.shape)
            samples = np.clip(draws, lower, upper)
            if iteration == 0:
                samples[0] = start
            costs = rollout_costs(dynamics, x0, samples, cost_fn, noise)
            if restart == 0 and iteration == 0:
                initial_cost = float(costs[0])
            order = np.argsort(costs, kind="stable")
            if costs[order[0]] < best_cost:
                best_cost, best_controls = float(costs[order[0]]), samples[order[0]].copy()
            elites = samples[order[: config.elites]]
            mean, std = elites.mean(axis=0), elites.std(axis=0)
    return best_controls, best_cost, initial_cost


def plan(
    dynamics: Dynamics,
    x0: np.ndarray,
    cost_fn: CostFn,
    bounds: tuple[np.ndarray, np.ndarray],
    config: MpcConfig,
    rng: np.random.Generator,
    previous: Optional[Plan] = None,
) -> Plan:
    """Best bounded H x K control sequence found over all restarts."""
    x0 = np.asarray(x0, dtype=np.float64)
    lower, upper = (np.asarray(bound, dtype=np.float64).ravel() for bound in bounds)
    if np.any(lower >= upper):
        raise ConfigError(f"control bounds need lower < upper, got {lower} and {upper}")
    center, scale = 0.5 * (upper + lower), 0.5 * (upper - lower)
    noise = rng.standard_normal((config.horizon, config.particles, dynamics.state_dim))
    starts = _initial_sequences(config, dynamics.control_dim, center, scale, rng, previous)
    if config.optimizer == "adam":
        controls, cost, initial_cost = _optimize_adam(
            dynamics, x0, cost_fn, noise, starts, center, scale, config
        )
    else:
        controls, cost, initial_cost = _optimize_cem(
            dynamics, x0, cost_fn, noise, starts, lower, upper, config, rng
        )
    controls = np.clip(controls, lower, upper)
    rollout = rollout_cost(dynamics, x0, controls, cost_fn, noise)
    return Plan(controls, cost, initial_cost, rollout.state_means, rollout.state_variances)


@dataclass(frozen=True)
class Episode:
    trajectory: Trajectory
    planned_costs: np.ndarray
    tip_distances: np.ndarray


OnStep = Callable[[Trajectory], Dynamics]


def mpc_episode(
    env: SimulatedSystem,
    dynamics: Dynamics,
    steps: int,
    config: MpcConfig,
    rng: np.random.Generator,
    task_id: str,
    on_step: Optional[OnStep] = None,
    initial_state: Optional[np.ndarray] = None,
) -> Episode:
    """Plan, apply the first control, observe, re-plan; ``steps`` times.

    ``on_step`` receives the trajectory so far after every transition and
    returns the dynamics to plan with next (online latent inference).
    """
    if steps < 1:
        raise ConfigError(f"an episode needs at least one step, got {steps}")
    state = env.sample_initial(rng) if initial_state is None else np.asarray(initial_state, dtype=np.float64)
    states, controls, costs = [state], [], []
    previous: Optional[Plan] = None
    for _ in range(steps):
        current = plan(dynamics, state, env.cost_terms, env.bounds, config, rng, previous)
        control = current.controls[0]
        state = env.step(state, control, rng)
        states.append(state)
        controls.append(control)
        costs.append(current.cost)
        previous = current
        if on_step is not None:
            dynamics = on_step(Trajectory(task_id, np.vstack(states), np.vstack(controls)))
    trajectory = Trajectory(task_id, np.vstack(states), np.vstack(controls))
    return Episode(trajectory, np.asarray(costs), np.asarray(env.tip_distance(trajectory.states)))
