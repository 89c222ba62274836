"""Entropy, estimation errors and mutual information along lambda.

For observation-form drifts with hidden parameter m:

    theta(lambda)   = 1/2 E int |E[u_dot(s) | U(s)]|^2 ds       (law of U)
                    = E[-log rho_hat]
    theta_joint     = 1/2 E int |u_dot(s)|^2 ds                 (m revealed)
    I(lambda)       = theta_joint - theta

and the lambda derivatives follow from

    d theta / d lambda   = -E[delta(K u') log rho_hat]
    d2 theta / d lambda2 = E[E[delta D | U] log L(U) + E[delta(K u') | U]^2]

with log L(U) = -log rho_hat. Every estimator uses common random numbers
across lambda (see `montecarlo.sample_model_paths`), and finite differences
are taken path by path before averaging.
"""

from dataclasses import dataclass
import logging

import numpy as np

from ._constants import (
    FD_LAMBDA_STEP_FIRST,
    FD_LAMBDA_STEP_SECOND,
    SE_MULTIPLIER,
    TOL_DERIVATIVE_FIRST,
    TOL_ENTROPY_AGREEMENT,
)
from .drifts import DriftModel, build_u
from .filtering import (
    RevealedEngine,
    conditional_expectation,
    conditional_rho_hat,
    run_filter,
    smoother,
)
from .girsanov import second_variation
from .malliavin import divergence
from .montecarlo import SimulationPlan, filter_generator, sample_model_paths
from .stats import Estimate, jackknife, mean_estimate

log = logging.getLogger(__name__)


def path_quantities(
    model: DriftModel, lam: float, plan: SimulationPlan, noncausal: bool = True
) -> dict[str, np.ndarray]:
    """Per-path raw quantities at one lambda, in path order.

    Keys: cm_norm_sq, filtered_energy, neg_log_rho_hat, log_likelihood,
    stochastic_term, accounting_residual, causal_error_drift,
    causal_error_signal, exponent, ess_min, collapsed and, with `noncausal`,
    noncausal_error_drift and noncausal_error_signal.
    """

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        shifted = build_u(model, lam, w, m, order=1)
        traj = shifted.trajectory
        obs = shifted.observation
        dt = plan.grid.dt
        out = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
        rho_hat = conditional_rho_hat(out, obs)
        result = {
            "cm_norm_sq": np.sum(traj.u**2, axis=-1) * dt,
            "filtered_energy": np.sum(out.filtered_drift**2, axis=-1) * dt,
            "neg_log_rho_hat": -rho_hat.log_value,
            "log_likelihood": out.log_likelihood,
            "stochastic_term": rho_hat.stochastic_term,
            "accounting_residual": rho_hat.accounting_residual,
            "causal_error_drift": np.sum((traj.u - out.filtered_drift) ** 2, axis=-1) * dt,
            "causal_error_signal": np.sum((traj.g - out.filtered_signal) ** 2, axis=-1) * dt,
            "exponent": divergence(model.solve_resolvent(traj, traj.u1), w),
            "ess_min": out.ess_min,
            "collapsed": out.collapsed,
        }
        if noncausal:
            smoothed = smoother(model, lam, obs, plan.engine, filter_generator(block_rng))
            result["noncausal_error_drift"] = (
                np.sum((traj.u - smoothed.smoothed_drift) ** 2, axis=-1) * dt
            )
            result["noncausal_error_signal"] = (
                np.sum((traj.g - smoothed.smoothed_signal) ** 2, axis=-1) * dt
            )
        return result

    return plan.run(block)


@dataclass(frozen=True)
class EntropyReport:
    lam: float
    theta_direct: Estimate
    theta_rho: Estimate
    difference: Estimate
    collapsed_paths: int

    @property
    def agreement(self) -> bool:
        scale = max(abs(self.theta_direct.value), 1e-12)
        return bool(
            abs(self.difference.value)
            <= max(SE_MULTIPLIER * self.difference.stderr, TOL_ENTROPY_AGREEMENT * scale)
        )


def entropy(model: DriftModel, lam: float, plan: SimulationPlan) -> EntropyReport:
    """theta two ways: filtered energy and E[-log rho_hat]."""
    return entropy_from_quantities(lam, path_quantities(model, lam, plan, noncausal=False))


def entropy_from_quantities(lam: float, q: dict[str, np.ndarray]) -> EntropyReport:
    direct = 0.5 * q["filtered_energy"]
    return EntropyReport(
        lam=lam,
        theta_direct=mean_estimate(direct),
        theta_rho=mean_estimate(q["neg_log_rho_hat"]),
        difference=mean_estimate(direct - q["neg_log_rho_hat"]),
        collapsed_paths=int(np.sum(q["collapsed"])),
    )


@dataclass(frozen=True)
class ErrorReport:
    """Squared estimation error of the drift and of the lambda-free signal."""

    lam: float
    drift: Estimate
    signal: Estimate


def errors_from_quantities(lam: float, q: dict[str, np.ndarray], kind: str) -> ErrorReport:
    """`kind` is "causal" or "noncausal"."""
    return ErrorReport(
        lam=lam,
        drift=mean_estimate(q[f"{kind}_error_drift"]),
        signal=mean_estimate(q[f"{kind}_error_signal"]),
    )


def causal_mmse(model: DriftModel, lam: float, plan: SimulationPlan) -> ErrorReport:
    return errors_from_quantities(lam, path_quantities(model, lam, plan, noncausal=False), "causal")


def noncausal_error(model: DriftModel, lam: float, plan: SimulationPlan) -> ErrorReport:
    return errors_from_quantities(lam, path_quantities(model, lam, plan), "noncausal")


@dataclass(frozen=True)
class DerivativeReport:
    """A lambda derivative by formula and by finite differences on the same paths."""

    lam: float
    formula: Estimate
    finite_difference: Estimate
    difference: Estimate
    step: float

    def agrees(self, rel_tol: float = TOL_DERIVATIVE_FIRST) -> bool:
        bound = max(
            SE_MULTIPLIER * self.difference.stderr,
            rel_tol * abs(self.finite_difference.value),
        )
        return bool(abs(self.difference.value) <= bound)


def derivative_report(lam, formula, fd, step) -> DerivativeReport:
    return DerivativeReport(
        lam=lam,
        formula=mean_estimate(formula),
        finite_difference=mean_estimate(fd),
        difference=mean_estimate(formula - fd),
        step=step,
    )


def _theta_per_path(model, lam, plan, size, block_rng) -> np.ndarray:
    w, m = sample_model_paths(model, plan.grid, size, block_rng)
    obs = build_u(model, lam, w, m).observation
    out = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
    return 0.5 * np.sum(out.filtered_drift**2, axis=-1) * plan.grid.dt


def entropy_derivative(
    model: DriftModel, lam: float, plan: SimulationPlan, step: float = FD_LAMBDA_STEP_FIRST
) -> DerivativeReport:
    """d theta / d lambda = -E[delta(K u') log rho_hat] against a central difference."""

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        shifted = build_u(model, lam, w, m, order=1)
        traj = shifted.trajectory
        out = run_filter(model, lam, shifted.observation, plan.engine, filter_generator(block_rng))
        rho_hat = conditional_rho_hat(out, shifted.observation)
        exponent = divergence(model.solve_resolvent(traj, traj.u1), w)
        up = _theta_per_path(model, lam + step, plan, size, block_rng)
        down = _theta_per_path(model, lam - step, plan, size, block_rng)
        return {
            "formula": -exponent * rho_hat.log_value,
            "fd": (up - down) / (2.0 * step),
        }

    q = plan.run(block)
    return derivative_report(lam, q["formula"], q["fd"], step)


def _conditional_second_order(model, lam, obs, plan, block_rng, variant) -> tuple[np.ndarray, np.ndarray]:
    """(E[delta D | U], E[delta(K u') | U]) on a block of observations."""

    def functional(w, m):
        sv = second_variation(model, lam, w, m, variant=variant)
        return np.stack([sv.divergence, sv.exponent], axis=-1)

    both = conditional_expectation(
        model, lam, obs, functional, plan.engine, filter_generator(block_rng)
    )
    return both[..., 0], both[..., 1]


def _second_order_terms(model, lam, plan, size, block_rng, variant="three_term"):
    w, m = sample_model_paths(model, plan.grid, size, block_rng)
    obs = build_u(model, lam, w, m).observation
    out = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
    neg_log_rho_hat = -conditional_rho_hat(out, obs).log_value
    cond_d, cond_exponent = _conditional_second_order(model, lam, obs, plan, block_rng, variant)
    return cond_d * neg_log_rho_hat, cond_exponent**2, cond_exponent * neg_log_rho_hat


def entropy_second_derivative(
    model: DriftModel, lam: float, plan: SimulationPlan, step: float = FD_LAMBDA_STEP_SECOND
) -> DerivativeReport:
    def block(index, size, block_rng):
        curvature, energy, _ = _second_order_terms(model, lam, plan, size, block_rng)
        mid = _theta_per_path(model, lam, plan, size, block_rng)
        up = _theta_per_path(model, lam + step, plan, size, block_rng)
        down = _theta_per_path(model, lam - step, plan, size, block_rng)
        return {"formula": curvature + energy, "fd": (up - 2.0 * mid + down) / step**2}

    q = plan.run(block)
    return derivative_report(lam, q["formula"], q["fd"], step)


@dataclass(frozen=True)
class InformationReport:
    lam: float
    theta_joint: Estimate
    tau: Estimate
    information: Estimate
    duncan: Estimate


def _information_per_path(model, lam, plan, size, block_rng) -> dict[str, np.ndarray]:
    w, m = sample_model_paths(model, plan.grid, size, block_rng)
    obs = build_u(model, lam, w, m).observation
    dt = plan.grid.dt
    marginal = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
    revealed = run_filter(model, lam, obs, RevealedEngine(m))
    f, f_rev = marginal.filtered_drift, revealed.filtered_drift
    joint = 0.5 * np.sum(f_rev**2, axis=-1) * dt
    tau = 0.5 * np.sum(f**2, axis=-1) * dt
    return {
        "theta_joint": joint,
        "tau": tau,
        "information": joint - tau,
        "duncan": 0.5 * np.sum((f_rev - f) ** 2, axis=-1) * dt,
    }


def mutual_information(model: DriftModel, lam: float, plan: SimulationPlan) -> InformationReport:
    """I = 1/2 (E int |E[u|U(m)]|^2 - E int |E[u|U]|^2)."""
    q = plan.run(lambda index, size, block_rng: _information_per_path(model, lam, plan, size, block_rng))
    return InformationReport(
        lam=lam,
        theta_joint=mean_estimate(q["theta_joint"]),
        tau=mean_estimate(q["tau"]),
        information=mean_estimate(q["information"]),
        duncan=mean_estimate(q["duncan"]),
    )


@dataclass(frozen=True)
class TauReport:
    lam: float
    tau: Estimate
    first: DerivativeReport
    second: DerivativeReport
    second_three_term: Estimate


def tau_derivatives(
    model: DriftModel,
    lam: float,
    plan: SimulationPlan,
    step_first: float = FD_LAMBDA_STEP_FIRST,
    step_second: float = FD_LAMBDA_STEP_SECOND,
) -> TauReport:
    """Derivatives of the U-marginal entropy with conditioned exponents.

    The second derivative uses the field delta(K u') K u' + d/dlambda(K u');
    the three-term field is reported alongside as a cross-check.
    """

    def block(index, size, block_rng):
        curvature, energy, first = _second_order_terms(
            model, lam, plan, size, block_rng, variant="lambda_derivative"
        )
        curvature_3, energy_3, _ = _second_order_terms(model, lam, plan, size, block_rng)
        mid = _theta_per_path(model, lam, plan, size, block_rng)
        up1 = _theta_per_path(model, lam + step_first, plan, size, block_rng)
        down1 = _theta_per_path(model, lam - step_first, plan, size, block_rng)
        up2 = _theta_per_path(model, lam + step_second, plan, size, block_rng)
        down2 = _theta_per_path(model, lam - step_second, plan, size, block_rng)
        return {
            "tau": mid,
            "first": first,
            "fd_first": (up1 - down1) / (2.0 * step_first),
            "second": curvature + energy,
            "second_three_term": curvature_3 + energy_3,
            "fd_second": (up2 - 2.0 * mid + down2) / step_second**2,
        }

    q = plan.run(block)
    return TauReport(
        lam=lam,
        tau=mean_estimate(q["tau"]),
        first=derivative_report(lam, q["first"], q["fd_first"], step_first),
        second=derivative_report(lam, q["second"], q["fd_second"], step_second),
        second_three_term=mean_estimate(q["second_three_term"]),
    )


def mutual_information_second_derivative(
    model: DriftModel, lam: float, plan: SimulationPlan, step: float = FD_LAMBDA_STEP_SECOND
) -> DerivativeReport:
    """d2I/dlambda2 = (m-revealed second derivative) - (tau second derivative).

    With m revealed every built-in drift is invertible, so the conditional
    expectations given U(m) are the values themselves and log L(m) o U = -log rho.
    """

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        shifted = build_u(model, lam, w, m)
        u = shifted.drift.density
        neg_log_rho = divergence(u, w) + 0.5 * np.sum(u**2, axis=-1) * plan.grid.dt
        sv = second_variation(model, lam, w, m)
        joint = sv.divergence * neg_log_rho + sv.exponent**2
        curvature, energy, _ = _second_order_terms(model, lam, plan, size, block_rng)
        info = {
            h: _information_per_path(model, lam + h, plan, size, block_rng)["information"]
            for h in (-step, 0.0, step)
        }
        return {
            "formula": joint - (curvature + energy),
            "fd": (info[step] - 2.0 * info[0.0] + info[-step]) / step**2,
        }

    q = plan.run(block)
    return derivative_report(lam, q["formula"], q["fd"], step)


def invertibility_gap(model: DriftModel, lam: float, plan: SimulationPlan) -> Estimate:
    """1/2 E|u|_H^2 - theta; zero iff U_lambda is almost surely invertible."""
    q = path_quantities(model, lam, plan, noncausal=False)
    return mean_estimate(0.5 * (q["cm_norm_sq"] - q["filtered_energy"]))


@dataclass(frozen=True)
class ImmseRow:
    lam: float
    information: Estimate
    derivative_fd: Estimate
    derivative_mmse: Estimate
    duncan: Estimate
    applies: bool


def immse_sweep(
    model: DriftModel, lambdas, plan: SimulationPlan, step: float = FD_LAMBDA_STEP_FIRST
) -> list[ImmseRow]:
    """dI/dlambda against c c' times the non-causal signal error.

    The relation holds for signals that do not look at the observation
    (argument "none"); rows for other drifts are reported with applies=False.
    """
    rows = []
    for lam in lambdas:
        coef = model.c(lam) * model.c(lam, 1)

        def block(index, size, block_rng, lam=lam):
            mid = _information_per_path(model, lam, plan, size, block_rng)
            up = _information_per_path(model, lam + step, plan, size, block_rng)
            down = _information_per_path(model, lam - step, plan, size, block_rng)
            w, m = sample_model_paths(model, plan.grid, size, block_rng)
            shifted = build_u(model, lam, w, m)
            smoothed = smoother(model, lam, shifted.observation, plan.engine, filter_generator(block_rng))
            nce = np.sum(
                (shifted.trajectory.g - smoothed.smoothed_signal) ** 2, axis=-1
            ) * plan.grid.dt
            return {
                "information": mid["information"],
                "duncan": mid["duncan"],
                "fd": (up["information"] - down["information"]) / (2.0 * step),
                "mmse": coef * nce,
            }

        q = plan.run(block)
        rows.append(
            ImmseRow(
                lam=float(lam),
                information=mean_estimate(q["information"]),
                derivative_fd=mean_estimate(q["fd"]),
                derivative_mmse=mean_estimate(q["mmse"]),
                duncan=mean_estimate(q["duncan"]),
                applies=model.argument == "none",
            )
        )
    return rows


@dataclass(frozen=True)
class ContinuityRow:
    lam_left: float
    lam_right: float
    drift_distance: Estimate
    stochastic_distance: Estimate

    @property
    def spacing(self) -> float:
        return self.lam_right - self.lam_left


def _root_mean(values: np.ndarray) -> Estimate:
    value, stderr = jackknife(lambda v: np.sqrt(np.mean(v)), values)
    return Estimate(float(value), float(stderr))


def lambda_continuity_sweep(model: DriftModel, lambdas, plan: SimulationPlan) -> list[ContinuityRow]:
    """L2 distances of the filtered drift and of int f dZ between adjacent lambdas."""
    lambdas = [float(lam) for lam in lambdas]

    def block(index, size, block_rng):
        w, m = sample_model_paths(model, plan.grid, size, block_rng)
        drifts, terms = [], []
        for lam in lambdas:
            obs = build_u(model, lam, w, m).observation
            out = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
            drifts.append(out.filtered_drift)
            terms.append(conditional_rho_hat(out, obs).stochastic_term)
        result = {}
        for j in range(len(lambdas) - 1):
            result[f"drift_{j}"] = np.sum((drifts[j + 1] - drifts[j]) ** 2, axis=-1) * plan.grid.dt
            result[f"term_{j}"] = (terms[j + 1] - terms[j]) ** 2
        return result

    q = plan.run(block)
    return [
        ContinuityRow(
            lam_left=lambdas[j],
            lam_right=lambdas[j + 1],
            drift_distance=_root_mean(q[f"drift_{j}"]),
            stochastic_distance=_root_mean(q[f"term_{j}"]),
        )
        for j in range(len(lambdas) - 1)
    ]


@dataclass(frozen=True)
class ConvexityReport:
    lam: float
    curvature_term: Estimate
    energy_term: Estimate
    second_derivative: Estimate
    verdict: str


def convexity_probe(model: DriftModel, lam: float, plan: SimulationPlan) -> ConvexityReport:
    """Sign of E[E[delta D|U] log L(U)] + E[E[delta(K u')|U]^2].

    A positive value at lambda_0 makes the entropy convex near lambda_0.
    Values within SE_MULTIPLIER standard errors of zero make no claim.
    """

    def block(index, size, block_rng):
        curvature, energy, _ = _second_order_terms(model, lam, plan, size, block_rng)
        return {"curvature": curvature, "energy": energy}

    q = plan.run(block)
    total = mean_estimate(q["curvature"] + q["energy"])
    if total.value > SE_MULTIPLIER * total.stderr:
        verdict = "convex"
    elif total.value < -SE_MULTIPLIER * total.stderr:
        verdict = "not_implied"
    else:
        verdict = "inconclusive"
    return ConvexityReport(
        lam=lam,
        curvature_term=mean_estimate(q["curvature"]),
        energy_term=mean_estimate(q["energy"]),
        second_derivative=total,
        verdict=verdict,
    )
