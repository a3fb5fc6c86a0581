"""
Command-line entry point for the experiment suites.

    python -m meta_dynamics model-quality --config my.yaml --seed 0
    python -m meta_dynamics rl --out-dir /tmp/rl --workers 4
    python -m meta_dynamics inspect-checkpoint /tmp/rl/checkpoints/seed-0/mlgp/train
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Iterable, Optional

from dotenv import load_dotenv

from ..control.metarl import STATE_FILE, load_state
from ..data import resolve_output_dir
from ..errors import CheckpointCorruptError, MetaDynamicsError
from ..models.checkpoint import describe_model
from . import embedding, model_quality, rl
from .config import ExperimentConfig, apply_overrides, config_hash, load_config

logger = logging.getLogger(__name__)

EXPERIMENTS: dict[str, Callable[[ExperimentConfig, Path], list[Path]]] = {
    model_quality.EXPERIMENT_ID: model_quality.run,
    embedding.EXPERIMENT_ID: embedding.run,
    rl.EXPERIMENT_ID: rl.run,
}


def parse_args(argv: Optional[Iterable[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="meta_dynamics",
        description="Meta-learned GP dynamics: model quality, latent embedding and model-based RL",
    )
    parser.add_argument("--log-level", default="INFO", help="Python logging level (default INFO)")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        command = commands.add_parser(name, help=f"run the {name} experiment")
        command.add_argument("--config", default=None, help="YAML config (default: packaged experiment_config.yaml)")
        command.add_argument("--seed", type=int, default=None, help="Run this single seed instead of the configured list")
        command.add_argument(
            "--out-dir",
            default=None,
            help="Output directory (default: config out_dir, then $DATA_ROOT/derived/<experiment>)",
        )
        command.add_argument("--workers", type=int, default=None, help="Processes for the seed fan-out")
    inspect = commands.add_parser("inspect-checkpoint", help="summarize a model file or meta-RL checkpoint")
    inspect.add_argument("path", help="model .parquet file or checkpoint directory")
    return parser.parse_args(list(argv) if argv is not None else None)


def inspect_checkpoint(path: Path) -> dict[str, object]:
    if path.is_dir():
        if not (path / STATE_FILE).exists():
            raise CheckpointCorruptError(f"{path} has no {STATE_FILE}")
        state = load_state(path)
        summary: dict[str, object] = {
            "phase": state.phase,
            "passes": state.passes,
            "complete": state.complete,
            "tasks": len(state.tasks),
            "solved": sorted(task_id for task_id, solved in state.solved.items() if solved),
            "transitions": state.dataset.transition_count,
        }
        if (path / "model.parquet").exists():
            summary["model"] = describe_model(path / "model.parquet")
        return summary
    if not path.exists():
        raise CheckpointCorruptError(f"{path} does not exist")
    return describe_model(path)


def run_experiment(name: str, args: argparse.Namespace) -> list[Path]:
    config = apply_overrides(load_config(args.config), args.seed, args.out_dir, args.workers)
    out_dir = resolve_output_dir(name, config.out_dir)
    logger.info("%s: seeds %s, config %s, writing to %s", name, list(config.seeds),
                config_hash(config)[:12], out_dir)
    written = EXPERIMENTS[name](config, out_dir)
    for path in written:
        logger.info("wrote %s", path)
    return written


def main(argv: Optional[Iterable[str]] = None) -> None:
    load_dotenv()
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "inspect-checkpoint":
            print(json.dumps(inspect_checkpoint(Path(args.path)), indent=2, sort_keys=True))
        else:
            for path in run_experiment(args.command, args):
                print(path)
    except MetaDynamicsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
