"""Girsanov densities and their lambda representation.

The density of the law of U_lambda with respect to Wiener measure satisfies

    L_lambda(x) = L_0(x) exp( int_0^lambda E[delta(K_a u'_a) | U_a = x] da ),
    K_a = (I + nabla u_a)^{-1},

which is what `density_along_lambda` integrates (trapezoid in lambda).
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import integrate

from ._constants import (
    DENSITY_LAMBDA_STEP,
    FD_DIRECTIONAL_STEP,
    FD_LAMBDA_STEP_FIELD,
    LOG_OVERFLOW,
)
from .drifts import DriftModel, DriftTrajectory, build_u
from .errors import DriftModelError
from .filtering import ConditioningEngine, conditional_expectation, conditional_rho_hat, run_filter
from .malliavin import JacobianMatrix, divergence
from .montecarlo import SimulationPlan, filter_generator, sample_model_paths
from .stats import Estimate, mean_estimate
from .wiener import CameronMartinPath, WienerPath, cm_norm_sq

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GirsanovWeight:
    """rho(-delta u) kept in the log domain."""

    log_value: np.ndarray

    @property
    def overflow(self) -> np.ndarray:
        return self.log_value > LOG_OVERFLOW

    @property
    def value(self) -> np.ndarray:
        return np.where(self.overflow, np.inf, np.exp(np.minimum(self.log_value, LOG_OVERFLOW)))


def rho(u: CameronMartinPath, w: WienerPath, jacobian: JacobianMatrix | None = None) -> GirsanovWeight:
    """exp(-delta u - |u|_H^2 / 2); `jacobian` is needed for anticipative u."""
    return GirsanovWeight(-divergence(u, w, jacobian) - 0.5 * cm_norm_sq(u))


def novikov_check(model: DriftModel, lam: float, plan: SimulationPlan) -> Estimate:
    """Monte Carlo E[rho(-delta u_lambda)], which must be 1."""

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        shifted = build_u(model, lam, w, m)
        return {"rho": rho(shifted.drift, w).value}

    est = mean_estimate(plan.run(block)["rho"])
    if not est.within(1.0):
        message = f"E[rho] = {est.value:.6f} +- {est.stderr:.2e} at lambda={lam}"
        if model.novikov_bounded:
            log.warning(f"{message} deviates from 1 for a bounded drift")
        else:
            log.warning(f"{message}; exponential integrability is not guaranteed")
    return est


def kernel_field(
    model: DriftModel, lam: float, w: WienerPath, m=None, order: int = 1
) -> tuple[DriftTrajectory, np.ndarray]:
    """(trajectory, K_lambda u'_lambda)."""
    traj = model.trajectory(lam, w, m, order=order)
    return traj, model.solve_resolvent(traj, traj.u1)


def density_exponent_field(model: DriftModel, lam: float, w: WienerPath, m=None) -> np.ndarray:
    """delta(K_lambda u'_lambda) at (w, m). The field is adapted."""
    _, field = kernel_field(model, lam, w, m)
    return divergence(field, w)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    lambdas: np.ndarray
    integrand: np.ndarray
    log_value: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return np.exp(self.log_value)


def density_along_lambda(
    model: DriftModel,
    lam: float,
    obs: WienerPath,
    engine: ConditioningEngine,
    gen: np.random.Generator | None = None,
    step: float = DENSITY_LAMBDA_STEP,
) -> DensityEstimate:
    """log L_lambda(obs) by integrating the conditional exponent in lambda."""
    if model.c(0.0) != 0.0:
        raise DriftModelError("The lambda representation needs u_0 = 0")
    count = max(1, int(np.ceil(abs(lam) / step - 1e-12)))
    lambdas = np.linspace(0.0, lam, count + 1)
    integrand = np.stack(
        [
            conditional_expectation(
                model,
                a,
                obs,
                lambda w, m, a=a: density_exponent_field(model, a, w, m),
                engine,
                gen,
            )
            for a in lambdas
        ],
        axis=-1,
    )
    log_value = integrate.trapezoid(integrand, lambdas, axis=-1)
    return DensityEstimate(lambdas=lambdas, integrand=integrand, log_value=log_value)


def _directional_derivative(fn, w: WienerPath, direction: np.ndarray) -> np.ndarray:
    """d/de fn(w + e h) at e = 0 for a per-path H-direction h (central)."""
    norm = np.sqrt(np.sum(direction**2, axis=-1) * w.grid.dt)
    eps = (FD_DIRECTIONAL_STEP / np.maximum(norm, 1.0))[..., None]
    bump = eps * direction * w.grid.dt
    plus = fn(WienerPath(w.grid, w.increments + bump))
    minus = fn(WienerPath(w.grid, w.increments - bump))
    return (plus - minus) / (2.0 * eps)


@dataclass(frozen=True, eq=False)
class SecondVariation:
    """D_lambda and its divergence, with the first-order pieces."""

    field: np.ndarray
    divergence: np.ndarray
    kernel: np.ndarray
    exponent: np.ndarray


def second_variation(
    model: DriftModel, lam: float, w: WienerPath, m=None, variant: str = "three_term"
) -> SecondVariation:
    """D = delta(K u') K u' - K (nabla u' . K u') + K u''.

    `variant="lambda_derivative"` builds the same field as
    delta(K u') K u' + d/dlambda (K u') with a central lambda difference at
    fixed (w, m).
    """
    if variant not in ("three_term", "lambda_derivative"):
        raise ValueError(f"Unknown second variation variant '{variant}'")
    traj, h = kernel_field(model, lam, w, m, order=2)
    exponent = divergence(h, w)

    if variant == "three_term":
        grad = model.solve_resolvent(traj, model.apply_derivative_gradient(traj, h))
        second = model.solve_resolvent(traj, traj.u2)
        tail = second - grad
    else:
        step = FD_LAMBDA_STEP_FIELD
        _, up = kernel_field(model, lam + step, w, traj.m)
        _, down = kernel_field(model, lam - step, w, traj.m)
        tail = (up - down) / (2.0 * step)

    # (nabla delta(h), h)_H = |h|_H^2 + sum_i (d_h h)(t_i) dW_i
    grad_exponent = np.sum(h**2, axis=-1) * w.grid.dt
    if model.argument != "none":
        dh = _directional_derivative(
            lambda shifted: kernel_field(model, lam, shifted, traj.m)[1], w, h
        )
        grad_exponent = grad_exponent + np.sum(dh * w.increments, axis=-1)

    field = exponent[..., None] * h + tail
    div = exponent**2 - grad_exponent + divergence(tail, w)
    return SecondVariation(field=field, divergence=div, kernel=h, exponent=exponent)


def conjugate_identity_check(model: DriftModel, lam: float, plan: SimulationPlan) -> Estimate:
    """Mean |L(U) * E[rho(-delta u) | U] - 1|, with rho_hat from the filter."""

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        obs = build_u(model, lam, w, m).observation
        output = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
        log_l = model.log_density(lam, obs)
        if log_l is None:
            log_l = output.log_likelihood
        rho_hat = conditional_rho_hat(output, obs)
        return {"residual": np.abs(np.expm1(log_l + rho_hat.log_value))}

    return mean_estimate(plan.run(block)["residual"])
