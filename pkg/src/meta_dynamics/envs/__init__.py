"""Simulated ground-truth systems and the toy regression family."""

from __future__ import annotations

from .base import IntegrationConfig, SimulatedSystem
from .cartpole import CartPole, CartPoleConfig
from .double_pendulum import DoublePendulum, DoublePendulumConfig
from ..errors import ConfigError

ENV_KINDS = (CartPole.kind, DoublePendulum.kind)


def make_env(
    kind: str,
    mass: float,
    length: float,
    integration: IntegrationConfig = IntegrationConfig(),
) -> SimulatedSystem:
    """Build a system from its varied parameters (pole or inner-link mass and length)."""
    if kind == CartPole.kind:
        return CartPole(CartPoleConfig(pole_mass=mass, pole_length=length), integration)
    if kind == DoublePendulum.kind:
        return DoublePendulum(DoublePendulumConfig(inner_mass=mass, inner_length=length), integration)
    raise ConfigError(f"unknown env kind {kind!r}; expected one of {ENV_KINDS}")


__all__ = [
    "CartPole",
    "CartPoleConfig",
    "DoublePendulum",
    "DoublePendulumConfig",
    "ENV_KINDS",
    "IntegrationConfig",
    "SimulatedSystem",
    "make_env",
]
