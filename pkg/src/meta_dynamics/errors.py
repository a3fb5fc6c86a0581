"""Exception types raised across the meta_dynamics package."""

from __future__ import annotations

import numpy as np


class MetaDynamicsError(Exception):
    """Base class for every error the package raises on purpose."""


class ShapeError(MetaDynamicsError, ValueError):
    """Operands or inputs have incompatible shapes."""


class NonFiniteError(MetaDynamicsError, ValueError):
    """A value, gradient or loss contains NaN or Inf."""


class CholeskyError(MetaDynamicsError, np.linalg.LinAlgError):
    """Cholesky factorisation failed after the full jitter ladder."""


class TapeError(MetaDynamicsError, RuntimeError):
    """The differentiation tape was used outside its contract."""


class UnknownTaskError(MetaDynamicsError, KeyError):
    """A task id has no registered latent posterior."""


class DuplicateTaskError(MetaDynamicsError, ValueError):
    """A task id was registered twice."""


class TrajectoryError(MetaDynamicsError, ValueError):
    """A trajectory breaks the chaining or length contract."""


class ConfigError(MetaDynamicsError, ValueError):
    """Experiment configuration failed schema validation."""


class CheckpointCorruptError(MetaDynamicsError, ValueError):
    """A dataset or checkpoint file could not be decoded."""


class UnsupportedVersionError(MetaDynamicsError, ValueError):
    """A dataset or checkpoint was written by a newer format version."""


class DivergenceError(MetaDynamicsError, RuntimeError):
    """A simulation or prediction produced non-finite states."""
