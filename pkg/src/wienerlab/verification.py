"""The identity suite behind `wienerlab verify`.

Every check returns report rows. A row with `passed=None` is informational;
any row with `passed=False` makes the suite fail. Checks that do not apply to
the scenario's model (for example filtering checks on a raw drift) are
skipped with a log message and produce no rows.
"""

import concurrent.futures
import logging

import numpy as np

from .drifts import build_u
from .entropy import (
    entropy_derivative,
    entropy_from_quantities,
    entropy_second_derivative,
    mutual_information,
    path_quantities,
)
from .errors import NumericalCollapseError
from .filtering import innovation, run_filter
from .girsanov import conjugate_identity_check, density_along_lambda, novikov_check
from .inversion import homotopy_invertibility, invert_shift, refinement_study
from .malliavin import (
    JacobianMatrix,
    carleman_check,
    divergence,
    gradient_matrix,
    quasi_nilpotency_defect,
    resolvent_apply,
    resolvent_residual,
)
from .montecarlo import SimulationPlan, filter_generator, sample_model_paths
from .oracles import Oracle, oracle_for
from .reports import ReportRow
from .scenario import CHECK_NAMES, ScenarioConfig, ToleranceSpec
from .stats import Estimate, mean_estimate, ratio_estimate
from .wiener import RngStream, TimeGrid, ito_integral

log = logging.getLogger(__name__)

# Absolute slack for oracle comparisons whose closed form is exactly zero.
_ZERO_SLACK = 1e-12

# Substreams of the scenario seed used by checks that draw their own paths.
_AUX_MATRIX = 101
_AUX_ANTICIPATIVE = 102
_AUX_ROUNDTRIP = 103
_AUX_DENSITY = 104

# Paths used by the checks that solve per path outside the block machinery.
_ROUNDTRIP_PATHS = 256
_DENSITY_PATHS = 64

# Lambda-independent checks run once; the rest run at every verify lambda.
_ONCE = {"anticipative_divergence", "homotopy"}


def _max(values) -> Estimate:
    return Estimate(float(np.max(values)), 0.0)


def check_collapse(q: dict[str, np.ndarray], lam: float):
    collapsed = np.asarray(q["collapsed"], dtype=bool)
    if np.any(collapsed):
        raise NumericalCollapseError(
            f"Filter weights collapsed at lambda={lam} on {int(collapsed.sum())} of "
            f"{collapsed.size} paths (min ESS {float(np.min(q['ess_min'])):.3g})"
        )


def oracle_row(
    oracle: Oracle,
    tol: ToleranceSpec,
    quantity: str,
    lam: float,
    est: Estimate,
    oracle_name: str | None = None,
) -> ReportRow:
    """A row checked against the closed form when the model has one."""
    value = oracle.value(oracle_name or quantity, lam)
    passed = None
    if value is not None:
        passed = est.within(
            value,
            rel_tol=tol.oracle_relative,
            abs_tol=_ZERO_SLACK,
            se_multiplier=tol.se_multiplier,
        )
    return ReportRow.from_estimate(quantity, lam, est, value, passed)


class Verifier:
    def __init__(
        self,
        config: ScenarioConfig,
        executor: concurrent.futures.Executor | None = None,
    ):
        self.config = config
        self.tol = config.tolerances
        self.model = config.build_model()
        self.grid = config.grid.build()
        self.rng = RngStream(config.seed)
        self.plan = SimulationPlan(
            self.grid, config.n_paths, self.rng, config.engine.build(), executor
        )
        self.oracle = oracle_for(self.model, self.grid)
        self._cache: dict[float, dict[str, np.ndarray]] = {}

    # Helpers

    def quantities(self, lam: float) -> dict[str, np.ndarray]:
        if lam not in self._cache:
            q = path_quantities(self.model, lam, self.plan, noncausal=False)
            check_collapse(q, lam)
            self._cache[lam] = q
        return self._cache[lam]

    def oracle_row(self, quantity: str, lam: float, est: Estimate) -> ReportRow:
        return oracle_row(self.oracle, self.tol, quantity, lam, est)

    def _skip(self, name: str, reason: str) -> list[ReportRow]:
        log.info(f"Skipping check '{name}': {reason}")
        return []

    def _matrix_sample(self, lam: float):
        spec = self.config.matrix_checks
        grid = TimeGrid(spec.n_steps)
        w, m = sample_model_paths(
            self.model, grid, spec.n_paths, self.rng.substream(_AUX_MATRIX)
        )
        return w, m, gradient_matrix(self.model, lam, w, m)

    # Malliavin layer

    def check_divergence_ito(self, lam: float) -> list[ReportRow]:
        w, m, jac = self._matrix_sample(lam)
        u = build_u(self.model, lam, w, m).drift
        gap = np.abs(divergence(u, w, jac) - ito_integral(u.density, w))
        fd = gradient_matrix(self.model, lam, w, m, mode="finite_difference")
        jac_error = np.max(np.abs(fd.matrix - jac.matrix), axis=(-2, -1))
        return [
            ReportRow.from_estimate(
                "divergence_ito", lam, _max(gap), passed=np.max(gap) <= self.tol.divergence_ito
            ),
            ReportRow.from_estimate(
                "jacobian_fd", lam, _max(jac_error), passed=np.max(jac_error) <= 1e-6
            ),
        ]

    def check_anticipative_divergence(self, lam: float) -> list[ReportRow]:
        """delta(W(1) 1) = W(1)^2 - 1, a field whose Jacobian is dt everywhere."""
        grid = self.grid
        jac = JacobianMatrix(grid, np.full((grid.n_steps, grid.n_steps), grid.dt))

        def block(index, size, block_rng):
            w, _ = sample_model_paths(self.model, grid, size, block_rng)
            field = np.repeat(w.terminal[:, None], grid.n_steps, axis=-1)
            value = divergence(field, w, jac)
            return {"value": value, "error": np.abs(value - (w.terminal**2 - 1.0))}

        plan = SimulationPlan(
            grid,
            self.config.n_paths,
            self.rng.substream(_AUX_ANTICIPATIVE),
            executor=self.plan.executor,
        )
        q = plan.run(block)
        mean = mean_estimate(q["value"])
        return [
            ReportRow.from_estimate(
                "anticipative_divergence_mean",
                None,
                mean,
                oracle=0.0,
                passed=mean.within(0.0, se_multiplier=self.tol.se_multiplier),
            ),
            ReportRow.from_estimate(
                "anticipative_divergence_exact",
                None,
                _max(q["error"]),
                passed=np.max(q["error"]) <= 1e-10,
            ),
        ]

    def check_resolvent(self, lam: float) -> list[ReportRow]:
        w, m, jac = self._matrix_sample(lam)
        v = self.rng.substream(_AUX_MATRIX).substream(3).generator().standard_normal(
            w.increments.shape
        )
        x = resolvent_apply(jac, v)
        scale = 1.0 + np.max(np.abs(v), axis=-1)
        residual = resolvent_residual(jac, v, x) / scale
        traj = self.model.trajectory(lam, w, m)
        matrix_free = np.max(np.abs(self.model.solve_resolvent(traj, v) - x), axis=-1) / scale
        return [
            ReportRow.from_estimate(
                "resolvent_residual",
                lam,
                _max(residual),
                passed=np.max(residual) <= self.tol.resolvent_residual,
            ),
            ReportRow.from_estimate(
                "resolvent_matrix_free",
                lam,
                _max(matrix_free),
                passed=np.max(matrix_free) <= self.tol.resolvent_residual,
            ),
        ]

    def check_quasi_nilpotency(self, lam: float) -> list[ReportRow]:
        _, _, jac = self._matrix_sample(lam)
        defect = quasi_nilpotency_defect(jac)
        return [
            ReportRow.from_estimate(
                "quasi_nilpotency_defect", lam, _max(defect), passed=np.max(defect) <= 1e-8
            )
        ]

    def check_carleman(self, lam: float) -> list[ReportRow]:
        _, _, jac = self._matrix_sample(lam)
        reports = carleman_check(jac)
        fraction = float(np.mean([r.satisfied for r in reports]))
        worst = max(r.op_norm / r.bound for r in reports)
        return [
            ReportRow.from_estimate(
                "carleman_satisfied", lam, Estimate(fraction, 0.0), 1.0, passed=fraction == 1.0
            ),
            ReportRow.from_estimate("carleman_norm_ratio", lam, Estimate(worst, 0.0)),
        ]

    # Girsanov and filtering

    def check_novikov(self, lam: float) -> list[ReportRow]:
        est = novikov_check(self.model, lam, self.plan)
        passed = None
        if self.model.novikov_bounded:
            passed = est.within(1.0, se_multiplier=self.tol.se_multiplier)
        return [ReportRow.from_estimate("novikov", lam, est, 1.0, passed)]

    def check_entropy(self, lam: float) -> list[ReportRow]:
        report = entropy_from_quantities(lam, self.quantities(lam))
        scale = max(abs(report.theta_direct.value), _ZERO_SLACK)
        agreement = abs(report.difference.value) <= max(
            self.tol.se_multiplier * report.difference.stderr,
            self.tol.entropy_agreement * scale,
        )
        return [
            self.oracle_row("theta", lam, report.theta_direct),
            self.oracle_row("theta_rho", lam, report.theta_rho),
            ReportRow.from_estimate(
                "entropy_difference", lam, report.difference, 0.0, passed=agreement
            ),
        ]

    def check_accounting(self, lam: float) -> list[ReportRow]:
        residual = self.quantities(lam)["accounting_residual"]
        if self.model.parameter.is_degenerate:
            est, bound = _max(residual), self.tol.accounting
        else:
            est, bound = mean_estimate(residual), self.tol.conjugate_identity
        return [ReportRow.from_estimate("accounting_residual", lam, est, passed=est.value <= bound)]

    def check_conjugate_identity(self, lam: float) -> list[ReportRow]:
        est = conjugate_identity_check(self.model, lam, self.plan)
        return [
            ReportRow.from_estimate(
                "conjugate_identity",
                lam,
                est,
                passed=est.value <= self.tol.conjugate_identity,
            )
        ]

    def check_innovation(self, lam: float) -> list[ReportRow]:
        model, plan = self.model, self.plan

        def block(index, size, block_rng):
            w, m = sample_model_paths(model, plan.grid, size, block_rng)
            obs = build_u(model, lam, w, m).observation
            out = run_filter(model, lam, obs, plan.engine, filter_generator(block_rng))
            dz = innovation(out, obs).increments
            return {
                "square": np.sum(dz**2, axis=-1),
                "lag1": np.sum(dz[..., 1:] * dz[..., :-1], axis=-1),
            }

        q = plan.run(block)
        n = plan.grid.n_steps
        variance = mean_estimate(q["square"] / n)
        correlation = ratio_estimate(q["lag1"] * n / max(n - 1, 1), q["square"])
        variance_ok = abs(variance.value / plan.grid.dt - 1.0) <= self.tol.innovation_variance
        return [
            ReportRow.from_estimate(
                "innovation_variance", lam, variance, plan.grid.dt, passed=variance_ok
            ),
            ReportRow.from_estimate(
                "innovation_lag1",
                lam,
                correlation,
                0.0,
                passed=abs(correlation.value) <= self.tol.innovation_lag1,
            ),
        ]

    def check_density(self, lam: float) -> list[ReportRow]:
        count = min(self.config.n_paths, _DENSITY_PATHS)
        stream = self.rng.substream(_AUX_DENSITY)
        w, m = sample_model_paths(self.model, self.grid, count, stream)
        obs = build_u(self.model, lam, w, m).observation
        exact = self.model.log_density(lam, obs)
        if exact is None:
            return self._skip("density", "no closed-form density for this model")
        est = density_along_lambda(
            self.model, lam, obs, self.plan.engine, filter_generator(stream)
        )
        error = np.abs(np.expm1(est.log_value - exact))
        bound = (
            self.tol.density_deterministic
            if self.model.kind in ("deterministic", "zero")
            else self.tol.density_gauss
        )
        return [
            ReportRow.from_estimate(
                "density_relative_error", lam, _max(error), 0.0, passed=np.max(error) <= bound
            )
        ]

    def check_derivatives(self, lam: float) -> list[ReportRow]:
        first = entropy_derivative(self.model, lam, self.plan)
        second = entropy_second_derivative(self.model, lam, self.plan)
        return [
            ReportRow.from_estimate(
                "dtheta",
                lam,
                first.formula,
                self.oracle.value("dtheta", lam),
                passed=first.agrees(self.tol.derivative_first),
            ),
            ReportRow.from_estimate("dtheta_fd", lam, first.finite_difference),
            ReportRow.from_estimate(
                "d2theta",
                lam,
                second.formula,
                self.oracle.value("d2theta", lam),
                passed=second.agrees(self.tol.derivative_second),
            ),
            ReportRow.from_estimate("d2theta_fd", lam, second.finite_difference),
        ]

    def check_information(self, lam: float) -> list[ReportRow]:
        report = mutual_information(self.model, lam, self.plan)
        return [
            self.oracle_row("theta_joint", lam, report.theta_joint),
            self.oracle_row("mutual_information", lam, report.information),
            self.oracle_row("duncan", lam, report.duncan),
        ]

    # Inversion

    def check_roundtrip(self, lam: float) -> list[ReportRow]:
        count = min(self.config.n_paths, _ROUNDTRIP_PATHS)
        stream = self.rng.substream(_AUX_ROUNDTRIP)
        w, m = sample_model_paths(self.model, self.grid, count, stream)
        solve = invert_shift(self.model, lam, w, m)
        bound = self.tol.roundtrip * (1.0 + np.max(np.abs(w.values), axis=-1))
        rows = [
            ReportRow.from_estimate(
                "roundtrip_sup",
                lam,
                _max(solve.roundtrip_sup),
                passed=bool(np.all(solve.roundtrip_sup <= bound)),
            )
        ]
        study = refinement_study(
            self.model, lam, list(self.config.levels()), count, stream.substream(3)
        )
        for level, err in zip(study.levels, study.strong_errors):
            rows.append(ReportRow.from_estimate(f"inversion_strong_error_n{level}", lam, err))
        if study.orders:
            order = min(study.orders)
            exact = max(e.value for e in study.strong_errors) <= _ZERO_SLACK
            rows.append(
                ReportRow.from_estimate(
                    "inversion_order", lam, Estimate(order, 0.0), passed=exact or order >= 0.5
                )
            )
        return rows

    def check_homotopy(self, lam: float) -> list[ReportRow]:
        if self.model.parametrization.kind != "linear":
            return self._skip("homotopy", "needs the linear parametrization")
        lambdas = self.config.lambda_grid.values
        report = homotopy_invertibility(self.model, lambdas, self.plan)
        rows = [self.oracle_row("gap", row.lam, row.gap) for row in report.rows]
        rows += [
            ReportRow.from_estimate("homotopy_integrand", row.lam, row.integrand)
            for row in report.rows
        ]
        gaps = [self.oracle.value("gap", x) for x in lambdas]
        if all(g is not None for g in gaps):
            expected = all(g <= _ZERO_SLACK for g in gaps)
        elif self.model.parameter.is_degenerate:
            expected = True
        else:
            expected = None
        rows.append(
            ReportRow.from_estimate(
                "homotopy_invertible",
                None,
                Estimate(float(report.invertible), 0.0),
                None if expected is None else float(expected),
                passed=None if expected is None else report.invertible == expected,
            )
        )
        rows.append(
            ReportRow.from_estimate(
                "reconstruction_residual", lambdas[-1], report.reconstruction_residual
            )
        )
        return rows

    # Driver

    def _applicable(self, name: str) -> str | None:
        """Reason to skip `name`, or None."""
        needs_filter = {
            "entropy", "accounting", "conjugate_identity", "innovation", "density",
            "derivatives", "information", "homotopy",
        }
        if name in needs_filter and not self.model.observation_form:
            return f"model '{self.model.kind}' is a raw drift"
        return None

    def run(self) -> list[ReportRow]:
        rows = []
        for name in CHECK_NAMES:
            if name not in self.config.checks:
                continue
            reason = self._applicable(name)
            if reason:
                self._skip(name, reason)
                continue
            check = getattr(self, f"check_{name}")
            lambdas = [None] if name in _ONCE else self.config.verify_lambdas
            for lam in lambdas:
                log.info(f"Running check '{name}'" + ("" if lam is None else f" at lambda={lam}"))
                rows.extend(check(lam))
        return rows
