"""
Parquet persistence for trained models and multi-task datasets.

Model files hold one row per named array (name, rows, cols, values) and
carry their scalar fields as JSON in the schema metadata under ``model``.
Dataset files hold one row per block. Both record ``format`` and
``format_version``; readers refuse versions newer than their own.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from ..errors import CheckpointCorruptError, UnsupportedVersionError
from .data import MultiTaskDataset, Standardizer, TaskData
from .kernel import KernelParams
from .latent import LatentPosterior
from .mlgp import MlgpModel
from .svgp import InducingSet, OutputVariational

MODEL_FORMAT = "meta_dynamics.mlgp"
DATASET_FORMAT = "meta_dynamics.dataset"
FORMAT_VERSION = 1

ARRAY_SCHEMA = pa.schema(
    [
        ("name", pa.string()),
        ("rows", pa.int64()),
        ("cols", pa.int64()),
        ("values", pa.list_(pa.float64())),
    ]
)
DATASET_SCHEMA = pa.schema(
    [
        ("task_id", pa.string()),
        ("rows", pa.int64()),
        ("state_dim", pa.int64()),
        ("control_dim", pa.int64()),
        ("states", pa.list_(pa.float64())),
        ("controls", pa.list_(pa.float64())),
        ("targets", pa.list_(pa.float64())),
    ]
)


def _write(path: str | Path, table: pa.Table, fmt: str, extra: dict[str, str]) -> Path:
    destination = Path(path)
    destination.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"format": fmt, "format_version": str(FORMAT_VERSION), **extra}
    table = table.replace_schema_metadata({key: value.encode("utf-8") for key, value in metadata.items()})
    pq.write_table(table, destination)
    return destination


def _read(path: str | Path, fmt: str) -> tuple[pa.Table, dict[str, str]]:
    source = Path(path)
    try:
        table = pq.read_table(source)
    except FileNotFoundError:
        raise
    except (pa.ArrowException, OSError) as exc:
        raise CheckpointCorruptError(f"{source}: cannot be decoded ({exc})") from exc
    metadata = {
        key.decode("utf-8"): value.decode("utf-8")
        for key, value in (table.schema.metadata or {}).items()
    }
    if metadata.get("format") != fmt:
        raise CheckpointCorruptError(f"{source}: expected format {fmt!r}, found {metadata.get('format')!r}")
    try:
        version = int(metadata["format_version"])
    except (KeyError, ValueError) as exc:
        raise CheckpointCorruptError(f"{source}: missing or invalid format_version") from exc
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{source}: format_version {version} is newer than supported {FORMAT_VERSION}"
        )
    return table, metadata


def model_arrays(model: MlgpModel) -> dict[str, np.ndarray]:
    arrays = dict(model.parameters())
    for name, value in model.standardizer.arrays().items():
        arrays[f"standardizer.{name}"] = np.asarray(value)[None, :]
    return arrays


def save_model(path: str | Path, model: MlgpModel) -> Path:
    arrays = model_arrays(model)
    table = pa.table(
        {
            "name": list(arrays),
            "rows": [int(value.shape[0]) for value in arrays.values()],
            "cols": [int(value.shape[1]) for value in arrays.values()],
            "values": [value.ravel().tolist() for value in arrays.values()],
        },
        schema=ARRAY_SCHEMA,
    )
    header = {
        "state_dim": model.state_dim,
        "control_dim": model.control_dim,
        "latent_dim": model.latent_dim,
        "task_ids": model.latents.task_ids,
        "rng_state": model.rng_state,
    }
    return _write(path, table, MODEL_FORMAT, {"model": json.dumps(header, sort_keys=True)})


def load_model(path: str | Path) -> MlgpModel:
    table, metadata = _read(path, MODEL_FORMAT)
    try:
        header = json.loads(metadata["model"])
        arrays = {
            row["name"]: np.asarray(row["values"], dtype=np.float64).reshape(row["rows"], row["cols"])
            for row in table.to_pylist()
        }
        state_dim = int(header["state_dim"])
        latent_dim = int(header["latent_dim"])
        latents = LatentPosterior(
            latent_dim,
            list(header["task_ids"]),
            arrays.get("latent.means"),
            arrays.get("latent.log_stds"),
        )
        return MlgpModel(
            state_dim=state_dim,
            control_dim=int(header["control_dim"]),
            latent_dim=latent_dim,
            kernel=KernelParams(
                float(arrays["kernel.log_variance"][0, 0]), arrays["kernel.log_lengthscales"][0]
            ),
            log_noise=arrays["likelihood.log_noise"][0],
            inducing=InducingSet(arrays["inducing.locations"]),
            variational=OutputVariational(
                arrays["variational.means"],
                np.stack([arrays[f"variational.factor.{d}"] for d in range(state_dim)]),
            ),
            latents=latents,
            standardizer=Standardizer.from_arrays(arrays, prefix="standardizer."),
            rng_state=header.get("rng_state"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointCorruptError(f"{path}: model content is incomplete ({exc})") from exc


def describe_model(path: str | Path) -> dict[str, object]:
    """Header facts of a model file, for ``inspect-checkpoint``."""
    model = load_model(path)
    _, metadata = _read(path, MODEL_FORMAT)
    return {
        "format": metadata["format"],
        "format_version": int(metadata["format_version"]),
        "state_dim": model.state_dim,
        "control_dim": model.control_dim,
        "latent_dim": model.latent_dim,
        "inducing_points": model.inducing.size,
        "tasks": {
            task_id: {
                "mean": model.latents.get(task_id).mean.tolist(),
                "std": model.latents.get(task_id).std.tolist(),
            }
            for task_id in model.latents.task_ids
        },
    }


def save_dataset(path: str | Path, dataset: MultiTaskDataset) -> Path:
    blocks = dataset.blocks
    table = pa.table(
        {
            "task_id": [block.task_id for block in blocks],
            "rows": [len(block) for block in blocks],
            "state_dim": [int(block.states.shape[1]) for block in blocks],
            "control_dim": [int(block.controls.shape[1]) for block in blocks],
            "states": [block.states.ravel().tolist() for block in blocks],
            "controls": [block.controls.ravel().tolist() for block in blocks],
            "targets": [block.targets.ravel().tolist() for block in blocks],
        },
        schema=DATASET_SCHEMA,
    )
    return _write(path, table, DATASET_FORMAT, {})


def load_dataset(path: str | Path) -> MultiTaskDataset:
    table, _ = _read(path, DATASET_FORMAT)
    dataset = MultiTaskDataset()
    try:
        for row in table.to_pylist():
            rows = row["rows"]
            dataset.add(
                TaskData(
                    row["task_id"],
                    np.asarray(row["states"], dtype=np.float64).reshape(rows, row["state_dim"]),
                    np.asarray(row["controls"], dtype=np.float64).reshape(rows, row["control_dim"]),
                    np.asarray(row["targets"], dtype=np.float64).reshape(rows, row["state_dim"]),
                )
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointCorruptError(f"{path}: dataset content is incomplete ({exc})") from exc
    return dataset
