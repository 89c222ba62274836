"""Discretised Wiener space.

A path lives on a uniform grid `t_i = i * dt` with `dt = 1 / n_steps` and is
stored through its increments. Every array carries the time axis last; any
leading axes index independent paths, and all operations broadcast over them:

    grid = TimeGrid(1024)
    w = sample_wiener(grid, RngStream(seed=7), n_paths=256)
    w.values.shape          # (256, 1025)
    ito_integral(np.ones(grid.n_steps), w)  # == w.terminal
"""

from dataclasses import dataclass
import hashlib

import numpy as np

from .errors import GridMismatchError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, 1]."""

    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        """All n_steps + 1 grid points."""
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def left_nodes(self) -> np.ndarray:
        """Left end points t_0 .. t_{n-1}, where adapted integrands are sampled."""
        return np.arange(self.n_steps) * self.dt

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.n_steps * factor)


def _check_last_axis(grid: TimeGrid, array: np.ndarray, what: str):
    if array.shape[-1:] != (grid.n_steps,):
        raise GridMismatchError(
            f"{what} has {array.shape[-1] if array.ndim else 0} steps, "
            f"grid has {grid.n_steps}"
        )


def check_same_grid(a: TimeGrid, b: TimeGrid):
    if a.n_steps != b.n_steps:
        raise GridMismatchError(f"Grid mismatch: {a.n_steps} vs {b.n_steps} steps")


@dataclass(frozen=True, eq=False)
class WienerPath:
    """A (batch of) path(s) w, stored as increments dW_i = w(t_{i+1}) - w(t_i)."""

    grid: TimeGrid
    increments: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "increments", np.asarray(self.increments, dtype=float))
        _check_last_axis(self.grid, self.increments, "Path")

    @classmethod
    def from_values(cls, grid: TimeGrid, values: np.ndarray) -> "WienerPath":
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != grid.n_steps + 1:
            raise GridMismatchError(
                f"Expected {grid.n_steps + 1} values, got {values.shape[-1]}"
            )
        return cls(grid, np.diff(values, axis=-1))

    @property
    def values(self) -> np.ndarray:
        """Path values at all grid nodes; values[..., 0] == 0."""
        zeros = np.zeros(self.increments.shape[:-1] + (1,))
        return np.concatenate([zeros, np.cumsum(self.increments, axis=-1)], axis=-1)

    @property
    def terminal(self) -> np.ndarray:
        return np.sum(self.increments, axis=-1)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.increments.shape[:-1]

    def coarsen(self, factor: int) -> "WienerPath":
        """Aggregates increments onto a grid `factor` times coarser."""
        if self.grid.n_steps % factor:
            raise GridMismatchError(
                f"Cannot coarsen {self.grid.n_steps} steps by {factor}"
            )
        grid = TimeGrid(self.grid.n_steps // factor)
        shape = self.batch_shape + (grid.n_steps, factor)
        return WienerPath(grid, self.increments.reshape(shape).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class CameronMartinPath:
    """An element h of H, stored through its density h_dot at left end points."""

    grid: TimeGrid
    density: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "density", np.asarray(self.density, dtype=float))
        _check_last_axis(self.grid, self.density, "Density")

    @property
    def primitive(self) -> np.ndarray:
        """h(t_i) = sum_{j<i} h_dot(t_j) dt, at all grid nodes."""
        zeros = np.zeros(self.density.shape[:-1] + (1,))
        steps = np.cumsum(self.density * self.grid.dt, axis=-1)
        return np.concatenate([zeros, steps], axis=-1)


def _derive_stream_id(stream_id: int, index: int) -> int:
    digest = hashlib.blake2b(
        f"{stream_id}:{index}".encode(), digest_size=8, person=b"wienerlab"
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Substreams are derived deterministically, so a block of paths always sees
    the same numbers no matter which worker simulates it.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError(
                f"seed and stream_id must be non-negative, got {self.seed}, {self.stream_id}"
            )

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, _derive_stream_id(self.stream_id, index))


def sample_wiener(
    grid: TimeGrid, rng: RngStream, n_paths: int | None = None
) -> WienerPath:
    """Draws Brownian increments N(0, dt). Deterministic given rng."""
    shape = (grid.n_steps,) if n_paths is None else (n_paths, grid.n_steps)
    increments = rng.generator().standard_normal(shape) * np.sqrt(grid.dt)
    return WienerPath(grid, increments)


def ito_integral(integrand: np.ndarray, path: WienerPath) -> np.ndarray:
    """Left-point sum  sum_i a(t_i) dW_i."""
    integrand = np.asarray(integrand, dtype=float)
    _check_last_axis(path.grid, integrand, "Integrand")
    return np.sum(integrand * path.increments, axis=-1)


def cm_norm_sq(h: CameronMartinPath) -> np.ndarray:
    """|h|_H^2 = sum_i h_dot(t_i)^2 dt."""
    return np.sum(h.density**2, axis=-1) * h.grid.dt


def cm_inner(a: CameronMartinPath, b: CameronMartinPath) -> np.ndarray:
    check_same_grid(a.grid, b.grid)
    return np.sum(a.density * b.density, axis=-1) * a.grid.dt


def apply_shift(path: WienerPath, u: CameronMartinPath) -> WienerPath:
    """U(w) = w + u(w), i.e. dU_i = dW_i + u_dot(t_i) dt."""
    check_same_grid(path.grid, u.grid)
    return WienerPath(path.grid, path.increments + u.density * path.grid.dt)
