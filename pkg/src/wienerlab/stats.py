"""Monte Carlo estimates with block-jackknife standard errors."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._constants import JACKKNIFE_BLOCK_SIZE, SE_MULTIPLIER


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def within(
        self,
        oracle: float,
        rel_tol: float = 0.0,
        abs_tol: float = 0.0,
        se_multiplier: float = SE_MULTIPLIER,
    ) -> bool:
        """|value - oracle| <= max(k * stderr, rel_tol * |oracle|, abs_tol)."""
        bound = max(se_multiplier * self.stderr, rel_tol * abs(oracle), abs_tol)
        return bool(abs(self.value - oracle) <= bound)

    def __sub__(self, other: "Estimate") -> "Estimate":
        # Only valid for independent estimates; paired differences should be
        # estimated directly.
        return Estimate(self.value - other.value, float(np.hypot(self.stderr, other.stderr)))


def _block_bounds(n: int, block_size: int) -> list[tuple[int, int]]:
    if n // block_size < 2:
        block_size = 1
    return [(start, min(start + block_size, n)) for start in range(0, n, block_size)]


def jackknife(
    estimator: Callable[..., np.ndarray],
    *samples: np.ndarray,
    block_size: int = JACKKNIFE_BLOCK_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one-block jackknife over the leading (path) axis.

    Returns (estimate on the full sample, standard error). Falls back to
    delete-one when there are fewer than two blocks.
    """
    samples = tuple(np.asarray(s) for s in samples)
    n = samples[0].shape[0]
    if any(s.shape[0] != n for s in samples):
        raise ValueError("All samples must have the same number of paths")
    full = np.asarray(estimator(*samples), dtype=float)
    if n < 2:
        return full, np.full_like(full, np.nan)
    bounds = _block_bounds(n, block_size)
    leave_out = []
    for start, stop in bounds:
        keep = np.ones(n, dtype=bool)
        keep[start:stop] = False
        leave_out.append(estimator(*(s[keep] for s in samples)))
    leave_out = np.asarray(leave_out, dtype=float)
    b = len(bounds)
    spread = leave_out - leave_out.mean(axis=0)
    stderr = np.sqrt((b - 1) / b * np.sum(spread**2, axis=0))
    return full, stderr


def mean_estimate(values: np.ndarray, block_size: int = JACKKNIFE_BLOCK_SIZE) -> Estimate:
    value, stderr = jackknife(lambda v: np.mean(v, axis=0), values, block_size=block_size)
    return Estimate(float(value), float(stderr))


def ratio_estimate(
    numerator: np.ndarray, denominator: np.ndarray, block_size: int = JACKKNIFE_BLOCK_SIZE
) -> Estimate:
    value, stderr = jackknife(
        lambda a, b: np.mean(a) / np.mean(b), numerator, denominator, block_size=block_size
    )
    return Estimate(float(value), float(stderr))


def relative_error(estimate: float, oracle: float | None) -> float | None:
    if oracle is None:
        return None
    if oracle == 0.0:
        return abs(estimate)
    return abs(estimate - oracle) / abs(oracle)
