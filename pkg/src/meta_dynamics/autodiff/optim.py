"""Adam with bias correction over named parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, ShapeError


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: AdamConfig = AdamConfig(),
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Take one descent step on every parameter that has a gradient.

    Parameters without a gradient entry are returned untouched. Inputs are
    not modified.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if grad.shape != params[name].shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {grad.shape}, parameter {params[name].shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient for {name!r} is not finite")

    step = state.step + 1
    bias1 = 1.0 - config.beta1**step
    bias2 = 1.0 - config.beta2**step
    updated = dict(params)
    first = dict(state.first_moment)
    second = dict(state.second_moment)
    for name, grad in grads.items():
        m = first.get(name, np.zeros_like(grad))
        v = second.get(name, np.zeros_like(grad))
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * (grad * grad)
        first[name], second[name] = m, v
        updated[name] = params[name] - (config.learning_rate / bias1) * m / (
            np.sqrt(v / bias2) + config.epsilon
        )
    return updated, AdamState(step, first, second)
