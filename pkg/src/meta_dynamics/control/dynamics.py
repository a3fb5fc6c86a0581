"""One-step dynamics the planner can differentiate through."""

from __future__ import annotations

from typing import Optional, Protocol

import numpy as np

from .. import autodiff as ad
from ..envs.base import SimulatedSystem
from ..models.latent import TaskPosterior
from ..models.mlgp import MlgpModel, latent_input, predictive_nodes


class Dynamics(Protocol):
    state_dim: int
    control_dim: int
    deterministic: bool

    def predict_nodes(self, states: ad.Node, controls: ad.Node) -> tuple[ad.Node, ad.Node]:
        """Mean and variance of the next state for n x D states and n x K controls."""
        ...


class MlgpDynamics:
    """GP predictive with the task latent held fixed at one value."""

    deterministic = False

    def __init__(self, model: MlgpModel, latent: Optional[np.ndarray] = None) -> None:
        self.model = model
        self.state_dim = model.state_dim
        self.control_dim = model.control_dim
        self.latent = np.zeros(model.latent_dim) if latent is None else np.asarray(latent, dtype=np.float64)
        model.predictive_factors()

    @classmethod
    def for_posterior(cls, model: MlgpModel, posterior: Optional[TaskPosterior]) -> "MlgpDynamics":
        return cls(model, latent_input(model, posterior, "mean-latent"))

    def predict_nodes(self, states: ad.Node, controls: ad.Node) -> tuple[ad.Node, ad.Node]:
        delta_mean, delta_var = predictive_nodes(self.model, states, controls, self.latent)
        return states + delta_mean, delta_var


class SimulatorDynamics:
    """The true equations of motion, noise-free, as a planning model."""

    deterministic = True

    def __init__(self, env: SimulatedSystem, substeps: Optional[int] = None) -> None:
        self.env = env
        self.substeps = substeps
        self.state_dim = env.state_dim
        self.control_dim = env.control_dim

    def predict_nodes(self, states: ad.Node, controls: ad.Node) -> tuple[ad.Node, ad.Node]:
        mean = self.env.integrate(states, controls, self.substeps)
        return mean, states.tape.constant(np.zeros(states.shape))
