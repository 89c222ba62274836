"""Simulation plans shared by the Monte Carlo estimators."""

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from ._parallel import BlockFn, map_blocks
from .drifts import DriftModel
from .filtering import ConditioningEngine, QuadratureEngine
from .wiener import RngStream, TimeGrid, WienerPath, sample_wiener


@dataclass(frozen=True)
class SimulationPlan:
    """Grid, sample size, random stream and engine of an experiment.

    `executor` only changes where blocks run, never what they compute.
    """

    grid: TimeGrid
    n_paths: int
    rng: RngStream
    engine: ConditioningEngine = field(default_factory=QuadratureEngine)
    executor: concurrent.futures.Executor | None = field(default=None, compare=False)

    def run(self, fn: BlockFn) -> dict[str, np.ndarray]:
        return map_blocks(fn, self.n_paths, self.rng, self.executor)


def sample_model_paths(
    model: DriftModel, grid: TimeGrid, n_paths: int, rng: RngStream
) -> tuple[WienerPath, np.ndarray]:
    """Draws (w, m) from substreams 0 and 1 of `rng`.

    Every lambda of a sweep calls this with the same stream, which gives common
    random numbers across lambda. Substream 2 is left for particle filters.
    """
    w = sample_wiener(grid, rng.substream(0), n_paths)
    m = model.parameter.sample(rng.substream(1).generator(), (n_paths,))
    return w, m


def filter_generator(rng: RngStream) -> np.random.Generator:
    return rng.substream(2).generator()
