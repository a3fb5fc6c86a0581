from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path
from typing import Callable

import numpy as np

PROJECT_ROOT = Path(__file__).parents[1]


def run_module(data_root: Path, *args: str) -> subprocess.CompletedProcess[str]:
    env = os.environ.copy()
    env["DATA_ROOT"] = str(data_root)
    env["PYTHONPATH"] = str(PROJECT_ROOT / "src")
    return subprocess.run(
        [sys.executable, "-m", "meta_dynamics", *args],
        cwd=PROJECT_ROOT,
        env=env,
        text=True,
        capture_output=True,
        check=False,
    )


def numeric_gradient(
    fn: Callable[[np.ndarray], float], value: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central differences of a scalar function of one array."""
    value = np.array(value, dtype=np.float64)
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        plus, minus = value.copy(), value.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (fn(plus) - fn(minus)) / (2.0 * step)
    return grad


def random_spd(size: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.standard_normal((size, size))
    return base @ base.T + size * np.eye(size)


def small_config_yaml(path: Path, body: str) -> Path:
    path.write_text(body, encoding="utf-8")
    return path
