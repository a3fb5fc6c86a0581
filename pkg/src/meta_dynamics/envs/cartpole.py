"""Cart-pole with a point mass at the pole tip; θ = 0 is upright, θ = π hangs down."""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any

import numpy as np

from ..errors import ConfigError
from .base import Columns, IntegrationConfig, SimulatedSystem, check_positive

GRAVITY = 9.81


@dataclass(frozen=True)
class CartPoleConfig:
    pole_mass: float
    pole_length: float
    cart_mass: float = 0.5
    friction: float = 0.1
    gravity: float = GRAVITY

    def __post_init__(self) -> None:
        check_positive(pole_mass=self.pole_mass, pole_length=self.pole_length, cart_mass=self.cart_mass)
        if self.friction < 0:
            raise ConfigError(f"friction must be >= 0, got {self.friction}")


class CartPole(SimulatedSystem):
    """State (x, ẋ, θ, θ̇), control one horizontal force on the cart in newtons."""

    kind = "cartpole"
    state_dim = 4
    control_dim = 1
    control_bound = 15.0
    success_threshold = 0.08

    def __init__(self, config: CartPoleConfig, integration: IntegrationConfig = IntegrationConfig()) -> None:
        super().__init__(integration)
        self.config = config

    @property
    def parameters(self) -> dict[str, float]:
        return {"mass": self.config.pole_mass, "length": self.config.pole_length}

    @property
    def initial_mean(self) -> np.ndarray:
        return np.array([0.0, 0.0, np.pi, 0.0])

    def derivatives(self, state: Columns, control: Columns, xp: SimpleNamespace) -> Columns:
        _, velocity, angle, spin = state
        (force,) = control
        c = self.config
        sin, cos = xp.sin(angle), xp.cos(angle)
        accel = (
            force
            - c.friction * velocity
            + c.pole_mass * c.pole_length * xp.square(spin) * sin
            - c.pole_mass * c.gravity * sin * cos
        ) / (c.cart_mass + c.pole_mass * xp.square(sin))
        angular = (c.gravity * sin - accel * cos) / c.pole_length
        return velocity, accel, spin, angular

    def tip(self, state: Columns, xp: SimpleNamespace) -> tuple[Any, Any]:
        position, _, angle, _ = state
        return position + self.config.pole_length * xp.sin(angle), self.config.pole_length * xp.cos(angle)

    def goal_tip(self) -> tuple[float, float]:
        return 0.0, self.config.pole_length

    def energy(self, state: np.ndarray) -> float:
        """Kinetic plus potential energy; conserved when friction and force are zero."""
        _, velocity, angle, spin = np.asarray(state, dtype=np.float64)
        c = self.config
        kinetic = (
            0.5 * (c.cart_mass + c.pole_mass) * velocity**2
            + c.pole_mass * c.pole_length * velocity * spin * np.cos(angle)
            + 0.5 * c.pole_mass * c.pole_length**2 * spin**2
        )
        return float(kinetic + c.pole_mass * c.gravity * c.pole_length * np.cos(angle))
