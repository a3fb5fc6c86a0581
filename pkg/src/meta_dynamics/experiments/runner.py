"""Fan a per-seed function out over processes and collect results in seed order."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Callable, TypeVar

from tqdm.auto import tqdm

from .config import ExperimentConfig

logger = logging.getLogger(__name__)

T = TypeVar("T")


def map_seeds(
    run_seed: Callable[[ExperimentConfig, int], T],
    config: ExperimentConfig,
    label: str,
) -> list[tuple[int, T]]:
    """``run_seed(config, seed)`` for every configured seed, sorted by seed.

    ``run_seed`` must be a module-level function when ``workers > 1``.
    """
    seeds = sorted(config.seeds)
    results: dict[int, T] = {}
    if config.workers == 1 or len(seeds) == 1:
        for seed in tqdm(seeds, desc=label, disable=not config.progress):
            results[seed] = run_seed(config, seed)
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            futures = {executor.submit(run_seed, config, seed): seed for seed in seeds}
            for future in tqdm(as_completed(futures), total=len(futures), desc=label,
                               disable=not config.progress):
                results[futures[future]] = future.result()
    logger.info("%s: %d seeds finished", label, len(results))
    return [(seed, results[seed]) for seed in seeds]
