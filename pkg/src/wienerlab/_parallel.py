"""Deterministic block decomposition of Monte Carlo work.

Block `b` always holds paths [b * block_size, (b + 1) * block_size) and always
draws from `rng.substream(b)`, so the concatenated result does not depend on
whether, or how many, worker threads ran the blocks.
"""

import concurrent.futures
import logging
from typing import Any, Callable

import numpy as np

from ._constants import PATH_BLOCK_SIZE
from .wiener import RngStream

log = logging.getLogger(__name__)

BlockFn = Callable[[int, int, RngStream], dict[str, Any]]


def block_sizes(n_paths: int, block_size: int = PATH_BLOCK_SIZE) -> list[int]:
    if n_paths < 1:
        raise ValueError(f"n_paths must be positive, got {n_paths}")
    full, rest = divmod(n_paths, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    fn: BlockFn,
    n_paths: int,
    rng: RngStream,
    executor: concurrent.futures.Executor | None = None,
    block_size: int = PATH_BLOCK_SIZE,
) -> dict[str, np.ndarray]:
    """Runs fn(block_index, block_paths, block_rng) over all blocks.

    Each call returns a dict of arrays with the paths on axis 0; the arrays are
    concatenated in block order.
    """
    jobs = [(b, size, rng.substream(b)) for b, size in enumerate(block_sizes(n_paths, block_size))]
    log.debug(f"Mapping {len(jobs)} blocks of up to {block_size} paths")
    if executor is None:
        results = [fn(*job) for job in jobs]
    else:
        # executor.map preserves submission order.
        results = list(executor.map(lambda job: fn(*job), jobs))
    return gather(results)


def gather(results: list[dict[str, Any]]) -> dict[str, np.ndarray]:
    if not results:
        return {}
    return {
        key: np.concatenate([np.atleast_1d(r[key]) for r in results], axis=0)
        for key in results[0]
    }
