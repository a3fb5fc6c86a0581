"""
Shared machinery for the simulated systems.

Equations of motion are written once against a small namespace (``sin``,
``cos``, ``square``, ``join``) so the same code integrates numpy batches
and tape nodes. States are n x D, controls n x K; each equation works on
n x 1 columns.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any, ClassVar, Optional

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, DivergenceError

logger = logging.getLogger(__name__)

DT = 0.1
SUBSTEPS = 10
NOISE_STD = 0.01
INITIAL_STD = 0.01

ARRAYS = SimpleNamespace(sin=np.sin, cos=np.cos, square=np.square, join=np.hstack)
NODES = SimpleNamespace(
    sin=ad.sin, cos=ad.cos, square=ad.square, join=lambda parts: ad.concat(parts, axis=1)
)

Columns = tuple[Any, ...]


def namespace_for(value: Any) -> SimpleNamespace:
    return NODES if isinstance(value, ad.Node) else ARRAYS


def columns(matrix: Any) -> Columns:
    return tuple(matrix[:, i : i + 1] for i in range(matrix.shape[1]))


@dataclass(frozen=True)
class IntegrationConfig:
    """Control interval, RK4 substeps and noise shared by every system."""

    dt: float = DT
    substeps: int = SUBSTEPS
    noise_std: float = NOISE_STD
    initial_std: float = INITIAL_STD

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.substeps < 1:
            raise ConfigError(f"dt must be > 0 and substeps >= 1, got {self.dt}, {self.substeps}")
        if self.noise_std < 0 or self.initial_std < 0:
            raise ConfigError("noise and initial standard deviations must be >= 0")


class SimulatedSystem(ABC):
    """A continuous-time system sampled at a fixed control interval."""

    kind: ClassVar[str]
    state_dim: ClassVar[int]
    control_dim: ClassVar[int]
    control_bound: ClassVar[float]
    success_threshold: ClassVar[float]

    def __init__(self, integration: IntegrationConfig = IntegrationConfig()) -> None:
        self.integration = integration

    @property
    @abstractmethod
    def parameters(self) -> dict[str, float]:
        """Varied physical parameters, e.g. mass and length of the pole."""

    @property
    @abstractmethod
    def initial_mean(self) -> np.ndarray:
        ...

    @abstractmethod
    def derivatives(self, state: Columns, control: Columns, xp: SimpleNamespace) -> Columns:
        ...

    @abstractmethod
    def tip(self, state: Columns, xp: SimpleNamespace) -> tuple[Any, Any]:
        ...

    @abstractmethod
    def goal_tip(self) -> tuple[float, float]:
        ...

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        bound = np.full(self.control_dim, self.control_bound)
        return -bound, bound

    def clamp(self, control: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(control, dtype=np.float64), -self.control_bound, self.control_bound)

    def integrate(self, states: Any, controls: Any, substeps: Optional[int] = None) -> Any:
        """Noise-free RK4 over one control interval, controls held constant."""
        xp = namespace_for(states)
        substeps = substeps or self.integration.substeps
        h = self.integration.dt / substeps
        state = columns(states)
        control = columns(controls)
        for _ in range(substeps):
            k1 = self.derivatives(state, control, xp)
            k2 = self.derivatives(_shift(state, k1, 0.5 * h), control, xp)
            k3 = self.derivatives(_shift(state, k2, 0.5 * h), control, xp)
            k4 = self.derivatives(_shift(state, k3, h), control, xp)
            state = tuple(
                s + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
                for s, a, b, c, d in zip(state, k1, k2, k3, k4)
            )
        return xp.join(list(state))

    def step(
        self,
        state: np.ndarray,
        control: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        noise: bool = True,
    ) -> np.ndarray:
        """One control interval: clamp, integrate, add process noise."""
        state = np.asarray(state, dtype=np.float64).reshape(1, self.state_dim)
        control = self.clamp(control).reshape(1, self.control_dim)
        next_state = self.integrate(state, control)[0]
        if not np.all(np.isfinite(next_state)):
            raise DivergenceError(
                f"{self.kind}: integration diverged from state {state[0].tolist()} "
                f"with control {control[0].tolist()}"
            )
        if noise and self.integration.noise_std > 0:
            if rng is None:
                raise ValueError("process noise needs an rng")
            next_state = next_state + self.integration.noise_std * rng.standard_normal(self.state_dim)
        return next_state

    def sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        """x₀ ~ N(μ₀, σ₀² I) around the hanging-down state."""
        if self.integration.initial_std == 0:
            return self.initial_mean.copy()
        return self.initial_mean + self.integration.initial_std * rng.standard_normal(self.state_dim)

    def cost_terms(self, states: Any) -> Any:
        """Squared tip-to-goal distance per row, n x 1 (array or node)."""
        xp = namespace_for(states)
        tip_x, tip_y = self.tip(columns(states), xp)
        goal_x, goal_y = self.goal_tip()
        return xp.square(tip_x - goal_x) + xp.square(tip_y - goal_y)

    def cost(self, state: np.ndarray) -> float | np.ndarray:
        states = np.asarray(state, dtype=np.float64)
        values = self.cost_terms(np.atleast_2d(states))[:, 0]
        return float(values[0]) if states.ndim == 1 else values

    def tip_distance(self, state: np.ndarray) -> float | np.ndarray:
        """Metres between the tip and its goal position."""
        return np.sqrt(self.cost(state))

    def describe(self) -> str:
        values = ", ".join(f"{key}={value:g}" for key, value in self.parameters.items())
        return f"{self.kind}({values})"


def _shift(state: Columns, slope: Columns, h: float) -> Columns:
    return tuple(s + h * k for s, k in zip(state, slope))


def check_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ConfigError(f"{name} must be positive, got {value}")

