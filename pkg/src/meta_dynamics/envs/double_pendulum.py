"""
Two-link arm with a motor at each joint.

θ₁ is measured from upright, θ₂ relative to link 1; masses sit at the link
ends. Both links hanging down is (π, 0, 0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any

import numpy as np

from .base import Columns, IntegrationConfig, SimulatedSystem, check_positive
from .cartpole import GRAVITY


@dataclass(frozen=True)
class DoublePendulumConfig:
    inner_mass: float
    inner_length: float
    outer_mass: float = 0.5
    outer_length: float = 0.5
    gravity: float = GRAVITY

    def __post_init__(self) -> None:
        check_positive(
            inner_mass=self.inner_mass,
            inner_length=self.inner_length,
            outer_mass=self.outer_mass,
            outer_length=self.outer_length,
        )


class DoublePendulum(SimulatedSystem):
    """State (θ₁, θ₂, θ̇₁, θ̇₂), controls two joint torques in N·m."""

    kind = "double-pendulum"
    state_dim = 4
    control_dim = 2
    control_bound = 4.0
    success_threshold = 0.22

    def __init__(
        self, config: DoublePendulumConfig, integration: IntegrationConfig = IntegrationConfig()
    ) -> None:
        super().__init__(integration)
        self.config = config

    @property
    def parameters(self) -> dict[str, float]:
        return {"mass": self.config.inner_mass, "length": self.config.inner_length}

    @property
    def initial_mean(self) -> np.ndarray:
        return np.array([np.pi, 0.0, 0.0, 0.0])

    def derivatives(self, state: Columns, control: Columns, xp: SimpleNamespace) -> Columns:
        inner, outer, inner_rate, outer_rate = state
        inner_torque, outer_torque = control
        c = self.config
        m1, m2, l1, l2, g = c.inner_mass, c.outer_mass, c.inner_length, c.outer_length, c.gravity

        cos_outer = xp.cos(outer)
        coupling = m2 * l1 * l2 * xp.sin(outer)
        mass_11 = (m1 + m2) * l1**2 + m2 * l2**2 + 2.0 * m2 * l1 * l2 * cos_outer
        mass_12 = m2 * l2**2 + m2 * l1 * l2 * cos_outer
        mass_22 = m2 * l2**2

        sin_tip = xp.sin(inner + outer)
        gravity_1 = -(m1 + m2) * g * l1 * xp.sin(inner) - m2 * g * l2 * sin_tip
        gravity_2 = -m2 * g * l2 * sin_tip
        coriolis_1 = -coupling * (2.0 * inner_rate * outer_rate + xp.square(outer_rate))
        coriolis_2 = coupling * xp.square(inner_rate)

        rhs_1 = inner_torque - coriolis_1 - gravity_1
        rhs_2 = outer_torque - coriolis_2 - gravity_2
        det = mass_11 * mass_22 - xp.square(mass_12)
        inner_accel = (mass_22 * rhs_1 - mass_12 * rhs_2) / det
        outer_accel = (mass_11 * rhs_2 - mass_12 * rhs_1) / det
        return inner_rate, outer_rate, inner_accel, outer_accel

    def tip(self, state: Columns, xp: SimpleNamespace) -> tuple[Any, Any]:
        inner, outer, _, _ = state
        c = self.config
        return (
            c.inner_length * xp.sin(inner) + c.outer_length * xp.sin(inner + outer),
            c.inner_length * xp.cos(inner) + c.outer_length * xp.cos(inner + outer),
        )

    def goal_tip(self) -> tuple[float, float]:
        return 0.0, self.config.inner_length + self.config.outer_length
