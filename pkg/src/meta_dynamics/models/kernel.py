"""Squared-exponential ARD covariance over augmented inputs (x, c, h)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..errors import ShapeError


@dataclass
class KernelParams:
    """σ_f² and one lengthscale per input column, both kept as logs."""

    log_variance: float
    log_lengthscales: np.ndarray

    @classmethod
    def initial(cls, input_dim: int) -> "KernelParams":
        # unit scales: inputs are standardized
        return cls(log_variance=0.0, log_lengthscales=np.zeros(input_dim))

    @property
    def input_dim(self) -> int:
        return int(self.log_lengthscales.shape[0])

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    def nodes(self, tape: ad.Tape) -> tuple[ad.Node, ad.Node]:
        """Constant (non-trainable) copies for evaluation-only tapes."""
        return tape.constant(self.log_variance), tape.constant(self.log_lengthscales)


def k(x_i: np.ndarray, x_j: np.ndarray, params: KernelParams) -> float:
    """σ_f² exp(-½ (x_i - x_j)ᵀ L⁻¹ (x_i - x_j)) for two single inputs."""
    x_i = np.asarray(x_i, dtype=np.float64).ravel()
    x_j = np.asarray(x_j, dtype=np.float64).ravel()
    if x_i.shape != x_j.shape or x_i.shape[0] != params.input_dim:
        raise ShapeError(
            f"kernel inputs have {x_i.shape[0]} and {x_j.shape[0]} entries, "
            f"expected {params.input_dim}"
        )
    scaled = (x_i - x_j) / params.lengthscales
    return params.variance * float(np.exp(-0.5 * scaled @ scaled))


def kernel_matrix_node(
    a: ad.Node,
    b: Optional[ad.Node],
    log_variance: ad.Node,
    log_lengthscales: ad.Node,
) -> ad.Node:
    """K(A, B) on the tape; ``b=None`` builds the symmetric K(A, A).

    The symmetric path zeroes the diagonal distances and mirrors the
    triangles, so the diagonal is exactly σ_f² and K equals Kᵀ bit for bit.
    """
    dims = log_lengthscales.shape[1]
    if a.shape[1] != dims or (b is not None and b.shape[1] != dims):
        raise ShapeError(
            f"kernel expects {dims} input columns, got {a.shape[1]}"
            + ("" if b is None else f" and {b.shape[1]}")
        )
    rows = a.shape[0]
    inverse_scales = ad.exp(-log_lengthscales)
    scaled_a = a * ad.broadcast_row(inverse_scales, rows)
    scaled_b = scaled_a if b is None else b * ad.broadcast_row(inverse_scales, b.shape[0])
    cols = scaled_b.shape[0]

    norms_a = ad.sum_(ad.square(scaled_a), axis=1)
    norms_b = norms_a if b is None else ad.sum_(ad.square(scaled_b), axis=1)
    distances = (
        ad.broadcast_col(norms_a, cols)
        + ad.broadcast_row(norms_b.T, rows)
        - 2.0 * (scaled_a @ scaled_b.T)
    )
    distances = ad.clamp_min(distances, 0.0)
    if b is None:
        distances = distances * (1.0 - np.eye(rows))
        distances = 0.5 * (distances + distances.T)
    return ad.exp(log_variance) * ad.exp(-0.5 * distances)


def kernel_diag_node(rows: int, log_variance: ad.Node) -> ad.Node:
    """Diagonal of K(A, A) as an nx1 column (σ_f² for a stationary kernel)."""
    return ad.broadcast_row(ad.exp(log_variance), rows)


def kernel_matrix(
    a: np.ndarray, b: Optional[np.ndarray], params: KernelParams
) -> np.ndarray:
    tape = ad.Tape()
    log_variance, log_lengthscales = params.nodes(tape)
    other = None if b is None or b is a else tape.constant(b)
    return kernel_matrix_node(tape.constant(a), other, log_variance, log_lengthscales).value


def kernel_diag(a: np.ndarray, params: KernelParams) -> np.ndarray:
    a = ad.as_matrix(a)
    if a.shape[1] != params.input_dim:
        raise ShapeError(f"kernel expects {params.input_dim} input columns, got {a.shape[1]}")
    return np.full(a.shape[0], params.variance)
