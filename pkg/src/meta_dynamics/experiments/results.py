"""Result rows, CSV/JSON emission and the artifact record written beside each file."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from ..artifacts import record_artifact


@dataclass(frozen=True)
class ResultRecord:
    experiment_id: str
    config_hash: str
    seed: int
    task_id: str
    metric: str
    value: float
    units: str
    model: str = ""
    inducing_points: int = 0


RESULT_COLUMNS = [f.name for f in fields(ResultRecord)]


def write_table(path: str | Path, frame: pd.DataFrame, source: Iterable[str]) -> Path:
    destination = Path(path)
    destination.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(destination, index=False, lineterminator="\n")
    record_artifact(destination, source)
    return destination


def write_records(path: str | Path, records: Sequence[ResultRecord], source: Iterable[str]) -> Path:
    frame = pd.DataFrame([asdict(record) for record in records], columns=RESULT_COLUMNS)
    return write_table(path, frame, source)


def write_json(path: str | Path, payload: Any, source: Iterable[str]) -> Path:
    destination = Path(path)
    destination.parent.mkdir(parents=True, exist_ok=True)
    destination.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    record_artifact(destination, source)
    return destination


def mean_and_se(values: Sequence[float]) -> dict[str, float]:
    """Mean and standard error over seeds; the error is 0 for a single value."""
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        return {"mean": math.nan, "se": math.nan, "n": 0}
    se = float(array.std(ddof=1) / math.sqrt(array.size)) if array.size > 1 else 0.0
    return {"mean": float(array.mean()), "se": se, "n": int(array.size)}


def sources_for(experiment_id: str, config_hash: str, seeds: Sequence[int]) -> list[str]:
    return [f"experiment:{experiment_id}", f"config:{config_hash}", *(f"seed:{seed}" for seed in seeds)]
