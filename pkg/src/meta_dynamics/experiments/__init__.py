"""Experiment suites: model quality, latent embedding and model-based RL."""

from __future__ import annotations

from pathlib import Path

DEFAULT_CONFIG_PATH = Path(__file__).with_name("experiment_config.yaml")
