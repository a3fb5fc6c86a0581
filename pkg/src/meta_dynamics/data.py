"""Where experiment outputs go when no directory is given explicitly."""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigError


def resolve_data_root(value: str | Path | None = None) -> Path:
    """Return the configured data root without assuming a personal filesystem path."""
    configured = value if value is not None else os.environ.get("DATA_ROOT")
    if configured is None or not str(configured).strip():
        raise ConfigError(
            "DATA_ROOT is required when --out-dir and out_dir are not supplied"
        )
    return Path(configured).expanduser().resolve()


def resolve_output_dir(experiment: str, out_dir: str | Path | None = None) -> Path:
    """``out_dir`` if given, else ``$DATA_ROOT/derived/<experiment>``."""
    if out_dir is not None and str(out_dir).strip():
        return Path(out_dir).expanduser().resolve()
    return resolve_data_root() / "derived" / experiment
