"""Non-causal estimation: smoothed drift and its lambda behaviour.

With K = (I + nabla u)^{-1} and b(s) = E[u_dot(s) | U(1)], the lambda
derivative of the smoothed drift at a fixed observation x is

    d/dlambda b(s) = E[(K u')(s) | x] + Cov(u_dot(s), delta(K u') | x)

and beta(lambda, s) = E[b(s)^2] has

    d beta / d lambda = 2 E[ b(s) ((K u')(s) + u_dot(s) delta(K u'))
                             - 1/2 b(s)^2 delta(K u') ].
"""

from dataclasses import dataclass
import logging

import numpy as np

from ._constants import (
    FD_LAMBDA_STEP_FIELD,
    FD_LAMBDA_STEP_FIRST,
    FD_LAMBDA_STEP_SECOND,
    SE_MULTIPLIER,
    TOL_DERIVATIVE_SECOND,
)
from .drifts import DriftModel, build_u
from .entropy import DerivativeReport, derivative_report
from .filtering import ConditioningEngine, conditional_expectation, smoother
from .girsanov import kernel_field
from .malliavin import divergence
from .montecarlo import SimulationPlan, filter_generator, sample_model_paths
from .stats import Estimate, jackknife, mean_estimate
from .wiener import WienerPath

log = logging.getLogger(__name__)


def smoothed_drift_derivative(
    model: DriftModel,
    lam: float,
    obs: WienerPath,
    engine: ConditioningEngine,
    gen: np.random.Generator | None = None,
    step: float = FD_LAMBDA_STEP_FIELD,
) -> tuple[np.ndarray, np.ndarray]:
    """(formula, central difference) of d/dlambda E[u_dot(t) | U_lambda = obs]."""
    n = obs.grid.n_steps

    def functional(w, m):
        traj, h = kernel_field(model, lam, w, m)
        exponent = divergence(h, w)
        return np.concatenate(
            [h, traj.u * exponent[..., None], traj.u, exponent[..., None]], axis=-1
        )

    cond = conditional_expectation(model, lam, obs, functional, engine, gen)
    kernel, cross, drift, exponent = (
        cond[..., :n],
        cond[..., n : 2 * n],
        cond[..., 2 * n : 3 * n],
        cond[..., 3 * n :],
    )
    formula = kernel + cross - drift * exponent
    up = smoother(model, lam + step, obs, engine, gen).smoothed_drift
    down = smoother(model, lam - step, obs, engine, gen).smoothed_drift
    return formula, (up - down) / (2.0 * step)


def _smoothed(model, lam, plan, size, block_rng):
    w, m = sample_model_paths(model, plan.grid, size, block_rng)
    shifted = build_u(model, lam, w, m, order=1)
    sm = smoother(model, lam, shifted.observation, plan.engine, filter_generator(block_rng))
    return w, shifted, sm.smoothed_drift


@dataclass(frozen=True)
class BetaReport:
    """beta integrated over s, its per-s profile and its lambda derivative."""

    lam: float
    beta: Estimate
    profile: np.ndarray
    profile_stderr: np.ndarray
    derivative: DerivativeReport


def beta_profile(
    model: DriftModel, lam: float, plan: SimulationPlan, step: float = FD_LAMBDA_STEP_FIRST
) -> BetaReport:
    dt = plan.grid.dt

    def block(index, size, block_rng):
        w, shifted, b = _smoothed(model, lam, plan, size, block_rng)
        traj = shifted.trajectory
        h = model.solve_resolvent(traj, traj.u1)
        exponent = divergence(h, w)[..., None]
        formula = 2.0 * (b * (h + traj.u * exponent) - 0.5 * b**2 * exponent)
        up = _smoothed(model, lam + step, plan, size, block_rng)[2]
        down = _smoothed(model, lam - step, plan, size, block_rng)[2]
        return {
            "squared": b**2,
            "formula": np.sum(formula, axis=-1) * dt,
            "fd": (np.sum(up**2, axis=-1) - np.sum(down**2, axis=-1)) * dt / (2.0 * step),
        }

    q = plan.run(block)
    profile, profile_stderr = jackknife(lambda v: np.mean(v, axis=0), q["squared"])
    return BetaReport(
        lam=lam,
        beta=mean_estimate(np.sum(q["squared"], axis=-1) * dt),
        profile=profile,
        profile_stderr=profile_stderr,
        derivative=derivative_report(lam, q["formula"], q["fd"], step),
    )


@dataclass(frozen=True)
class CurvatureReport:
    """Second difference of int beta(lambda, s) ds at lambda = 0.

    `reference` is E int |u'_0(s)|^2 ds, the value a second-order expansion
    of beta around zero would suggest; `discrepancy` flags disagreement.
    """

    step: float
    second_difference: Estimate
    reference: Estimate
    discrepancy: bool


def beta_curvature_at_zero(
    model: DriftModel, plan: SimulationPlan, step: float = FD_LAMBDA_STEP_SECOND
) -> CurvatureReport:
    dt = plan.grid.dt

    def block(index, size, block_rng):
        energy = {
            h: np.sum(_smoothed(model, h, plan, size, block_rng)[2] ** 2, axis=-1) * dt
            for h in (-step, 0.0, step)
        }
        shifted = _smoothed(model, 0.0, plan, size, block_rng)[1]
        return {
            "second": (energy[step] - 2.0 * energy[0.0] + energy[-step]) / step**2,
            "reference": np.sum(shifted.trajectory.u1**2, axis=-1) * dt,
        }

    q = plan.run(block)
    second = mean_estimate(q["second"])
    reference = mean_estimate(q["reference"])
    discrepancy = not second.within(
        reference.value, rel_tol=TOL_DERIVATIVE_SECOND, se_multiplier=SE_MULTIPLIER
    )
    if discrepancy:
        log.warning(
            f"beta curvature at 0 is {second.value:.4g} +- {second.stderr:.2g}, "
            f"expected {reference.value:.4g} from the second-order expansion"
        )
    return CurvatureReport(
        step=step, second_difference=second, reference=reference, discrepancy=discrepancy
    )
