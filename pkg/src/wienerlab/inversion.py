"""Inverse of the shift U = I + u and the lambda-homotopy invertibility test.

The inverse V solves dV = -u_dot(V) dt + dW, stepped with the same left-point
rule as the forward map, so U(V(w)) = w holds on the grid up to rounding. The
dt-accuracy of V is measured against a finer grid driven by the same Brownian
path (`refinement_study`).
"""

from dataclasses import dataclass
import logging

import numpy as np

from ._constants import INVERSE_BLOWUP, SE_MULTIPLIER, TOL_ROUNDTRIP
from .drifts import DriftModel, build_u
from .errors import DriftModelError
from .filtering import conditional_expectation, innovation, run_filter
from .girsanov import density_exponent_field, rho
from .montecarlo import SimulationPlan, filter_generator, sample_model_paths
from .stats import Estimate, jackknife, mean_estimate
from .wiener import RngStream, TimeGrid, WienerPath, sample_wiener

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InverseSolve:
    """The inverse path V. One Euler pass is the Picard fixed point on the grid."""

    path: WienerPath
    roundtrip_sup: np.ndarray
    converged: np.ndarray
    iterations: int = 1


def _inverse_increments(model: DriftModel, lam: float, w: WienerPath, m) -> np.ndarray:
    grid = w.grid
    dt = grid.dt
    c = model.c(lam)
    t = grid.left_nodes
    mm = np.asarray(m, dtype=float)[..., None]
    if model.argument == "none":
        drift = c * model.signal(t, np.zeros_like(w.increments), mm)
    elif model.argument == "observation":
        # The argument path of the drift along V is U(V) = w itself.
        drift = c * model.signal(t, w.values[..., :-1], mm)
    else:
        drift = np.empty(np.broadcast_shapes(w.increments.shape, mm.shape))
        v = np.zeros(drift.shape[:-1])
        m_now = np.asarray(m, dtype=float)
        for i in range(grid.n_steps):
            drift[..., i] = c * model.signal(i * dt, v, m_now)
            v = v - drift[..., i] * dt + w.increments[..., i]
    return w.increments - drift * dt


def invert_shift(model: DriftModel, lam: float, w: WienerPath, m=None) -> InverseSolve:
    """V with U(V) = w, plus the sup-norm roundtrip error in both directions."""
    m = model.default_parameter(w.batch_shape) if m is None else np.asarray(m, dtype=float)
    v = WienerPath(w.grid, _inverse_increments(model, lam, w, m))
    forward = build_u(model, lam, v, m).observation
    back = WienerPath(w.grid, _inverse_increments(model, lam, build_u(model, lam, w, m).observation, m))
    err = np.maximum(
        np.max(np.abs(forward.values - w.values), axis=-1),
        np.max(np.abs(back.values - w.values), axis=-1),
    )
    scale = 1.0 + np.max(np.abs(w.values), axis=-1)
    bounded = np.max(np.abs(v.values), axis=-1) <= INVERSE_BLOWUP
    converged = (err <= TOL_ROUNDTRIP * scale) & bounded
    if not np.all(bounded):
        log.warning(f"Inverse path left |V| <= {INVERSE_BLOWUP:g} on {int(np.sum(~bounded))} paths")
    return InverseSolve(path=v, roundtrip_sup=err, converged=converged)


@dataclass(frozen=True)
class RefinementReport:
    levels: list[int]
    reference_steps: int
    strong_errors: list[Estimate]
    orders: list[float]


def refinement_study(
    model: DriftModel,
    lam: float,
    levels: list[int],
    n_paths: int,
    rng: RngStream,
    reference_factor: int = 4,
) -> RefinementReport:
    """RMS of sup_t |V_n - V_ref| at the coarse nodes, per grid level."""
    levels = sorted(levels)
    n_ref = levels[-1] * reference_factor
    if any(n_ref % n for n in levels):
        raise ValueError(f"Levels {levels} must divide the reference grid {n_ref}")
    fine = sample_wiener(TimeGrid(n_ref), rng.substream(0), n_paths)
    m = model.parameter.sample(rng.substream(1).generator(), (n_paths,))
    reference = invert_shift(model, lam, fine, m).path.values
    errors = []
    for n in levels:
        factor = n_ref // n
        coarse = invert_shift(model, lam, fine.coarsen(factor), m).path.values
        sup = np.max(np.abs(coarse - reference[..., ::factor]), axis=-1)
        value, stderr = jackknife(lambda s: np.sqrt(np.mean(s**2)), sup)
        errors.append(Estimate(float(value), float(stderr)))
    orders = [
        float(np.log(errors[k].value / errors[k + 1].value) / np.log(levels[k + 1] / levels[k]))
        if errors[k + 1].value > 0.0
        else float("inf")
        for k in range(len(levels) - 1)
    ]
    return RefinementReport(
        levels=levels, reference_steps=n_ref, strong_errors=errors, orders=orders
    )


@dataclass(frozen=True)
class HomotopyRow:
    lam: float
    gap: Estimate
    integrand: Estimate
    integrand_max: float
    integrand_q99: float


@dataclass(frozen=True)
class HomotopyReport:
    rows: list[HomotopyRow]
    reconstruction_residual: Estimate
    invertible: bool


def homotopy_invertibility(model: DriftModel, lambdas, plan: SimulationPlan) -> HomotopyReport:
    """Invertibility of U_a = I + a u along a lambda grid.

    For each a: the gap 1/2 E|u_a|^2 - theta(a) and the integrand
    rho(-delta u_a) |E[delta(K_a u') | U_a]|. The verdict is positive when
    every gap is within SE_MULTIPLIER standard errors of zero. The residual
    RMS sup_t |W - Z| at the last lambda measures how far the innovation is
    from reconstructing the noise.
    """
    if model.parametrization.kind != "linear":
        raise DriftModelError("The homotopy test needs the linear parametrization")
    lambdas = [float(lam) for lam in lambdas]
    dt = plan.grid.dt

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        result = {}
        for j, lam in enumerate(lambdas):
            shifted = build_u(model, lam, w, m)
            obs = shifted.observation
            out = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
            u = shifted.drift.density
            result[f"gap_{j}"] = 0.5 * np.sum(u**2 - out.filtered_drift**2, axis=-1) * dt
            cond = conditional_expectation(
                model,
                lam,
                obs,
                lambda wk, mk, lam=lam: density_exponent_field(model, lam, wk, mk),
                plan.engine,
                filter_generator(block_rng),
            )
            result[f"integrand_{j}"] = rho(shifted.drift, w).value * np.abs(cond)
            if j == len(lambdas) - 1:
                z = innovation(out, obs).values
                result["residual"] = np.max(np.abs(w.values - z), axis=-1)
        return result

    q = plan.run(block)
    rows = []
    for j, lam in enumerate(lambdas):
        gap = mean_estimate(q[f"gap_{j}"])
        integrand = q[f"integrand_{j}"]
        rows.append(
            HomotopyRow(
                lam=lam,
                gap=gap,
                integrand=mean_estimate(integrand),
                integrand_max=float(np.max(integrand)),
                integrand_q99=float(np.quantile(integrand, 0.99)),
            )
        )
    value, stderr = jackknife(lambda s: np.sqrt(np.mean(s**2)), q["residual"])
    invertible = all(row.gap.value <= SE_MULTIPLIER * row.gap.stderr + 1e-12 for row in rows)
    log.info(f"Homotopy verdict for '{model.kind}': invertible={invertible}")
    return HomotopyReport(
        rows=rows,
        reconstruction_residual=Estimate(float(value), float(stderr)),
        invertible=invertible,
    )
