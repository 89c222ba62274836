"""Conditioning engines for observation-form drifts.

Given an observation path U, the posterior of the hidden parameter m follows
from the likelihood

    log l_i(m) = sum_{j<i} c g(t_j, U_j, m) dU_j - 1/2 sum_{j<i} c^2 g(t_j, U_j, m)^2 dt

and any functional F(w, m) is conditioned through the mixture

    E[F | U] = sum_k W_k F(U - u(U, m_k), m_k).

Engines only differ in how they place the m_k:

    QuadratureEngine  Gauss-Hermite (gaussian) or Gauss-Legendre (uniform) nodes
    ParticleEngine    draws from the prior, systematic resampling when ESS < N/2
    RevealedEngine    the true m, i.e. conditioning on U(m) with m known
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
import logging
from typing import Callable, ClassVar

import numpy as np
from scipy.special import logsumexp

from ._constants import COLLAPSE_ESS, RESAMPLE_ESS_FRACTION
from .drifts import DriftModel, recover_noise
from .errors import RawDriftError
from .wiener import TimeGrid, WienerPath

log = logging.getLogger(__name__)

# Upper bound on paths * particles * steps held at once by conditional_expectation.
_CHUNK_ELEMENTS = 1 << 22


class ConditioningEngine(ABC):
    """Abstract placement of the parameter values m_k."""

    tag: ClassVar[str]
    resamples: ClassVar[bool] = False

    @abstractmethod
    def initial_particles(
        self,
        model: DriftModel,
        batch_shape: tuple[int, ...],
        gen: np.random.Generator | None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (values, normalised log weights), both batch_shape + (K,)."""
        pass

    def describe(self) -> dict:
        return {"engine": self.tag}


class QuadratureEngine(ConditioningEngine):
    tag = "quadrature"

    def __init__(self, n_nodes: int = 64):
        if n_nodes < 1:
            raise ValueError(f"n_nodes must be positive, got {n_nodes}")
        self.n_nodes = n_nodes

    def initial_particles(self, model, batch_shape, gen):
        nodes, log_w = model.parameter.quadrature(self.n_nodes)
        shape = tuple(batch_shape) + nodes.shape
        return np.broadcast_to(nodes, shape).copy(), np.broadcast_to(log_w, shape).copy()

    def describe(self) -> dict:
        return super().describe() | {"nodes": self.n_nodes}


class ParticleEngine(ConditioningEngine):
    tag = "particle"
    resamples = True

    def __init__(self, n_particles: int = 512):
        if n_particles < 1:
            raise ValueError(f"n_particles must be positive, got {n_particles}")
        self.n_particles = n_particles

    def initial_particles(self, model, batch_shape, gen):
        if model.parameter.is_degenerate:
            shape = tuple(batch_shape) + (1,)
            return np.full(shape, model.parameter.loc), np.zeros(shape)
        if gen is None:
            raise ValueError("ParticleEngine needs a random generator")
        shape = tuple(batch_shape) + (self.n_particles,)
        values = model.parameter.sample(gen, shape)
        return values, np.full(shape, -np.log(self.n_particles))

    def describe(self) -> dict:
        return super().describe() | {"particles": self.n_particles}


class RevealedEngine(ConditioningEngine):
    """Conditions on U(m) with m known: a single particle at the true value."""

    tag = "revealed"

    def __init__(self, m: np.ndarray):
        self.m = np.asarray(m, dtype=float)

    def initial_particles(self, model, batch_shape, gen):
        shape = tuple(batch_shape) + (1,)
        return np.broadcast_to(self.m[..., None], shape).copy(), np.zeros(shape)


def systematic_resample(
    values: np.ndarray, log_weights: np.ndarray, rows: np.ndarray, gen: np.random.Generator
) -> None:
    """Resamples the selected rows (of a (R, K) array) in place."""
    k = values.shape[-1]
    offsets = (gen.uniform(size=len(rows))[:, None] + np.arange(k)) / k
    for row, u in zip(rows, offsets):
        cdf = np.cumsum(np.exp(log_weights[row]))
        cdf[-1] = 1.0
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), k - 1)
        values[row] = values[row][idx]
        log_weights[row] = -np.log(k)


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Result of a filter pass over a batch of observation paths.

    `filtered_signal[..., i]` uses data strictly before step i. The filtered
    drift is `c(lambda) * filtered_signal`. `log_normalizer[..., i]` is the
    running log-likelihood after step i, so its last entry is log L(U).
    """

    lam: float
    grid: TimeGrid
    engine: str
    coefficient: float
    filtered_signal: np.ndarray
    log_normalizer: np.ndarray
    ess_min: np.ndarray
    n_resamples: np.ndarray
    collapsed: np.ndarray
    particles: np.ndarray
    log_weights: np.ndarray

    @property
    def filtered_drift(self) -> np.ndarray:
        return self.coefficient * self.filtered_signal

    @property
    def log_likelihood(self) -> np.ndarray:
        return self.log_normalizer[..., -1]


def _require_observation_form(model: DriftModel):
    if not model.observation_form:
        raise RawDriftError(
            f"Model '{model.kind}' is a raw drift; conditioning needs an "
            "observation-form drift"
        )


def run_filter(
    model: DriftModel,
    lam: float,
    obs: WienerPath,
    engine: ConditioningEngine,
    gen: np.random.Generator | None = None,
    resample: bool = True,
) -> FilterOutput:
    """Kallianpur-Striebel filter of the drift along the observation."""
    _require_observation_form(model)
    grid = obs.grid
    dt = grid.dt
    c = model.c(lam)
    batch = obs.batch_shape
    values, log_w = engine.initial_particles(model, batch, gen)
    k = values.shape[-1]
    values = values.reshape((-1, k))
    log_w = log_w.reshape((-1, k))
    log_w = log_w - logsumexp(log_w, axis=-1, keepdims=True)
    x = obs.values.reshape((-1, grid.n_steps + 1))
    dx = obs.increments.reshape((-1, grid.n_steps))
    rows = x.shape[0]

    filtered = np.empty((rows, grid.n_steps))
    log_norm = np.empty((rows, grid.n_steps))
    running = np.zeros(rows)
    ess_min = np.full(rows, float(k))
    n_resamples = np.zeros(rows, dtype=int)
    do_resample = engine.resamples and resample and k > 1
    if do_resample and gen is None:
        raise ValueError("Resampling needs a random generator")

    for i in range(grid.n_steps):
        weights = np.exp(log_w)
        g = model.signal(i * dt, x[:, i, None], values)
        filtered[:, i] = np.sum(weights * g, axis=-1)
        a = c * g * dx[:, i, None] - 0.5 * (c * g) ** 2 * dt
        inc = logsumexp(log_w + a, axis=-1)
        running = running + inc
        log_norm[:, i] = running
        log_w = log_w + a - inc[:, None]
        ess = 1.0 / np.sum(np.exp(2.0 * log_w), axis=-1)
        ess_min = np.minimum(ess_min, ess)
        if do_resample:
            low = np.flatnonzero(ess < RESAMPLE_ESS_FRACTION * k)
            if low.size:
                systematic_resample(values, log_w, low, gen)
                n_resamples[low] += 1

    collapsed = (ess_min < COLLAPSE_ESS) if engine.resamples and k > 1 else np.zeros(rows, bool)
    if np.any(collapsed):
        log.warning(
            f"Particle weights collapsed (ESS < {COLLAPSE_ESS}) on "
            f"{int(np.sum(collapsed))} of {rows} paths at lambda={lam}"
        )
    shape = batch + (grid.n_steps,)
    return FilterOutput(
        lam=lam,
        grid=grid,
        engine=engine.tag,
        coefficient=c,
        filtered_signal=filtered.reshape(shape),
        log_normalizer=log_norm.reshape(shape),
        ess_min=ess_min.reshape(batch),
        n_resamples=n_resamples.reshape(batch),
        collapsed=collapsed.reshape(batch),
        particles=values.reshape(batch + (k,)),
        log_weights=log_w.reshape(batch + (k,)),
    )


def quadrature_filter(
    model: DriftModel, lam: float, obs: WienerPath, n_nodes: int = 64
) -> FilterOutput:
    return run_filter(model, lam, obs, QuadratureEngine(n_nodes))


def innovation(output: FilterOutput, obs: WienerPath) -> WienerPath:
    """dZ_i = dU_i - filtered_drift_i dt."""
    return WienerPath(obs.grid, obs.increments - output.filtered_drift * obs.grid.dt)


@dataclass(frozen=True, eq=False)
class RhoHat:
    """E[rho(-delta u) | U] through the innovation representation.

    log rho_hat = -(stochastic_term + energy_term), and
    stochastic_term + energy_term is the innovation decomposition of log L o U.
    """

    stochastic_term: np.ndarray
    energy_term: np.ndarray
    accounting_residual: np.ndarray

    @property
    def log_value(self) -> np.ndarray:
        return -(self.stochastic_term + self.energy_term)

    @property
    def value(self) -> np.ndarray:
        return np.exp(self.log_value)


def conditional_rho_hat(output: FilterOutput, obs: WienerPath) -> RhoHat:
    f = output.filtered_drift
    dz = innovation(output, obs).increments
    stochastic = np.sum(f * dz, axis=-1)
    energy = 0.5 * np.sum(f**2, axis=-1) * obs.grid.dt
    residual = np.abs(output.log_likelihood - (stochastic + energy))
    return RhoHat(stochastic_term=stochastic, energy_term=energy, accounting_residual=residual)


@dataclass(frozen=True, eq=False)
class SmootherOutput:
    lam: float
    coefficient: float
    smoothed_signal: np.ndarray
    particles: np.ndarray
    log_weights: np.ndarray

    @property
    def smoothed_drift(self) -> np.ndarray:
        return self.coefficient * self.smoothed_signal


def posterior(
    model: DriftModel,
    lam: float,
    obs: WienerPath,
    engine: ConditioningEngine,
    gen: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal (particles, normalised log weights) given the whole path."""
    _require_observation_form(model)
    values, log_w = engine.initial_particles(model, obs.batch_shape, gen)
    c = model.c(lam)
    dt = obs.grid.dt
    x = obs.values
    for i in range(obs.grid.n_steps):
        g = model.signal(i * dt, x[..., i, None], values)
        log_w = log_w + c * g * obs.increments[..., i, None] - 0.5 * (c * g) ** 2 * dt
    return values, log_w - logsumexp(log_w, axis=-1, keepdims=True)


def smoother(
    model: DriftModel,
    lam: float,
    obs: WienerPath,
    engine: ConditioningEngine,
    gen: np.random.Generator | None = None,
) -> SmootherOutput:
    """E[u_dot(t_i) | U(1)] from terminal weights, without resampling."""
    values, log_w = posterior(model, lam, obs, engine, gen)
    weights = np.exp(log_w)
    dt = obs.grid.dt
    smoothed = np.empty(obs.increments.shape)
    for i in range(obs.grid.n_steps):
        g = model.signal(i * dt, obs.values[..., i, None], values)
        smoothed[..., i] = np.sum(weights * g, axis=-1)
    return SmootherOutput(
        lam=lam,
        coefficient=model.c(lam),
        smoothed_signal=smoothed,
        particles=values,
        log_weights=log_w,
    )


Functional = Callable[[WienerPath, np.ndarray], np.ndarray]


def conditional_expectation(
    model: DriftModel,
    lam: float,
    obs: WienerPath,
    functional: Functional,
    engine: ConditioningEngine,
    gen: np.random.Generator | None = None,
) -> np.ndarray:
    """E[F(w, m) | U_lambda = obs] for a functional evaluated per particle.

    `functional(w, m)` receives a WienerPath with batch shape (P, K) and the
    matching parameter values, and returns an array of shape (P, K, ...).
    """
    values, log_w = posterior(model, lam, obs, engine, gen)
    rows = int(np.prod(obs.batch_shape, dtype=int))
    k = values.shape[-1]
    n = obs.grid.n_steps
    flat_obs = obs.increments.reshape((rows, n))
    flat_values = values.reshape((rows, k))
    flat_weights = np.exp(log_w.reshape((rows, k)))
    chunk = max(1, _CHUNK_ELEMENTS // (k * n))
    results = []
    for start in range(0, rows, chunk):
        stop = min(start + chunk, rows)
        part_obs = WienerPath(obs.grid, flat_obs[start:stop, None, :])
        m = flat_values[start:stop]
        w = recover_noise(model, lam, part_obs, m)
        f = np.asarray(functional(w, m), dtype=float)
        weights = flat_weights[start:stop].reshape(m.shape + (1,) * (f.ndim - 2))
        results.append(np.sum(weights * f, axis=1))
    out = np.concatenate(results, axis=0)
    return out.reshape(obs.batch_shape + out.shape[1:])
