"""
Sparse variational GP pieces shared by every output dimension.

One inducing set Z serves all D outputs; each output d has its own
q(u^d) = N(m^d, S^d) with S^d = C_d C_dᵀ. Every K_ZZ⁻¹ product goes through
triangular solves against the Cholesky factor of K_ZZ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

from .. import autodiff as ad
from ..errors import ShapeError
from .kernel import KernelParams, kernel_diag_node, kernel_matrix_node

VARIANCE_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class InducingSet:
    """M locations in the augmented (x, c, h) input space."""

    locations: np.ndarray

    def __post_init__(self) -> None:
        self.locations = ad.as_matrix(self.locations, "inducing locations")

    @property
    def size(self) -> int:
        return int(self.locations.shape[0])

    @classmethod
    def from_inputs(
        cls,
        inputs: np.ndarray,
        size: int,
        rng: np.random.Generator,
    ) -> "InducingSet":
        """Cover the data: k-means centres, or a random subset for small data."""
        if size < 1:
            raise ShapeError(f"need at least one inducing point, got {size}")
        rows = inputs.shape[0]
        if rows < 3 * size:
            picks = rng.choice(rows, size=size, replace=rows < size)
            return cls(inputs[picks].copy())
        centres, _ = kmeans2(inputs, size, iter=20, minit="++", seed=rng)
        return cls(centres)


@dataclass
class OutputVariational:
    """Per-output means (M x D) and raw lower factors (D x M x M).

    The diagonal of each raw factor holds log C_ii so S^d stays positive
    definite for any unconstrained values.
    """

    means: np.ndarray
    raw_factors: np.ndarray

    @property
    def output_dim(self) -> int:
        return int(self.means.shape[1])

    @classmethod
    def prior_matched(cls, kzz_factor: np.ndarray, output_dim: int) -> "OutputVariational":
        """m^d = 0 and S^d = K_ZZ, so q(U) starts equal to p(U)."""
        size = kzz_factor.shape[0]
        raw = np.tril(kzz_factor, -1) + np.diag(np.log(np.diag(kzz_factor)))
        return cls(np.zeros((size, output_dim)), np.repeat(raw[None], output_dim, axis=0))

    def factor(self, output: int) -> np.ndarray:
        raw = self.raw_factors[output]
        return np.tril(raw, -1) + np.diag(np.exp(np.diag(raw)))

    def covariance(self, output: int) -> np.ndarray:
        factor = self.factor(output)
        return factor @ factor.T


def factor_node(raw: ad.Node) -> ad.Node:
    """Lower factor with exponentiated diagonal from its raw parameterisation."""
    size = raw.shape[0]
    strict_lower = np.tril(np.ones((size, size)), -1)
    return raw * strict_lower + ad.exp(raw) * np.eye(size)


def conditional(
    kzz_factor: ad.Node,
    kzx: ad.Node,
    kxx_diag: ad.Node,
    means: ad.Node,
    factors: Sequence[ad.Node],
    floor: Optional[float] = VARIANCE_FLOOR,
) -> tuple[ad.Node, ad.Node]:
    """Posterior mean and marginal variance (N x D) at the columns of K_ZX.

    mean_d = k_Zᵀ K_ZZ⁻¹ m^d
    var_d  = k(x, x) - k_Zᵀ K_ZZ⁻¹ (K_ZZ - S^d) K_ZZ⁻¹ k_Z
    """
    projected = ad.solve_triangular(kzz_factor, kzx)
    weights = ad.solve_triangular(kzz_factor, projected, transpose=True)
    mean = weights.T @ means
    shrink = kxx_diag - ad.sum_(ad.square(projected), axis=0).T
    columns = []
    for factor in factors:
        spread = factor.T @ weights
        columns.append(shrink + ad.sum_(ad.square(spread), axis=0).T)
    variance = ad.concat(columns, axis=1)
    if floor is not None:
        variance = ad.clamp_min(variance, floor)
    return mean, variance


def kl_inducing_node(
    kzz_factor: ad.Node,
    means: ad.Node,
    factors: Sequence[ad.Node],
) -> ad.Node:
    """Σ_d KL[N(m^d, S^d) || N(0, K_ZZ)]."""
    size = kzz_factor.shape[0]
    logdet_prior = ad.logdet_cholesky(kzz_factor)
    mahalanobis = ad.sum_(ad.square(ad.solve_triangular(kzz_factor, means)))
    total = 0.5 * (mahalanobis - size * len(factors))
    for factor in factors:
        trace = ad.sum_(ad.square(ad.solve_triangular(kzz_factor, factor)))
        total = total + 0.5 * (trace + logdet_prior - ad.logdet_cholesky(factor))
    return total


def _evaluate(
    points: np.ndarray,
    locations: np.ndarray,
    params: KernelParams,
    means: np.ndarray,
    factors: Sequence[np.ndarray],
    floor: Optional[float],
) -> tuple[np.ndarray, np.ndarray]:
    tape = ad.Tape()
    log_variance, log_lengthscales = params.nodes(tape)
    z = tape.constant(locations)
    x = tape.constant(points)
    kzz_factor = ad.cholesky(kernel_matrix_node(z, None, log_variance, log_lengthscales))
    kzx = kernel_matrix_node(z, x, log_variance, log_lengthscales)
    mean, variance = conditional(
        kzz_factor,
        kzx,
        kernel_diag_node(x.shape[0], log_variance),
        tape.constant(means),
        [tape.constant(factor) for factor in factors],
        floor=floor,
    )
    return mean.value, variance.value


def posterior_mean(
    points: np.ndarray,
    locations: np.ndarray,
    mean: np.ndarray,
    params: KernelParams,
) -> np.ndarray:
    """One output's posterior mean, k_Z(x*)ᵀ K_ZZ⁻¹ m^d."""
    size = locations.shape[0]
    values, _ = _evaluate(
        points, locations, params, np.reshape(mean, (size, 1)), [np.zeros((size, size))], None
    )
    return values[:, 0]


def posterior_var(
    points: np.ndarray,
    locations: np.ndarray,
    factor: np.ndarray,
    params: KernelParams,
    floor: Optional[float] = VARIANCE_FLOOR,
) -> np.ndarray:
    """Posterior marginal variance of one output whose S^d = factor factorᵀ."""
    size = locations.shape[0]
    _, values = _evaluate(points, locations, params, np.zeros((size, 1)), [factor], floor)
    return values[:, 0]


def kl_inducing(
    means: np.ndarray,
    factors: Sequence[np.ndarray],
    locations: np.ndarray,
    params: KernelParams,
) -> float:
    tape = ad.Tape()
    log_variance, log_lengthscales = params.nodes(tape)
    kzz = kernel_matrix_node(tape.constant(locations), None, log_variance, log_lengthscales)
    return kl_inducing_node(
        ad.cholesky(kzz),
        tape.constant(np.reshape(means, (locations.shape[0], -1))),
        [tape.constant(factor) for factor in factors],
    ).item()

