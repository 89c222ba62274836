"""Subcommand implementations: simulate, verify, sweep and report.

The runner owns the worker pool. Modules below it are pure functions of
(scenario, seed), and every file is written here, after all blocks have been
reduced, by a single writer.
"""

import concurrent.futures
import contextlib
from pathlib import Path
import logging
import time

import numpy as np

from .anticipative import beta_curvature_at_zero, beta_profile
from .drifts import build_u
from .entropy import (
    convexity_probe,
    entropy_derivative,
    entropy_from_quantities,
    entropy_second_derivative,
    errors_from_quantities,
    immse_sweep,
    lambda_continuity_sweep,
    mutual_information,
    mutual_information_second_derivative,
    path_quantities,
    tau_derivatives,
)
from .errors import ScenarioError
from .girsanov import novikov_check, rho
from .montecarlo import SimulationPlan, sample_model_paths
from .oracles import oracle_for
from .reports import (
    ReportRow,
    ScenarioReport,
    aggregate,
    load_report,
    write_digest,
    write_records,
)
from .scenario import ScenarioConfig
from .stats import mean_estimate
from .verification import Verifier, check_collapse, oracle_row
from .wiener import RngStream

log = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "verify", "sweep", "report")

# Filter-based sweep groups; raw drifts only get "girsanov".
_FILTER_GROUPS = {
    "entropy", "errors", "gap", "information", "immse", "derivatives", "continuity",
    "tau", "beta", "convexity", "information_curvature",
}


@contextlib.contextmanager
def worker_pool(threads: int):
    """Yields an executor for threads > 1, otherwise None (inline execution)."""
    if threads < 1:
        raise ScenarioError(f"--threads must be positive, got {threads}")
    if threads == 1:
        yield None
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        yield executor


def _metadata(config: ScenarioConfig, model, engine) -> dict:
    return {
        "model": model.describe(),
        "engine": engine.describe(),
        "n_steps": config.grid.n_steps,
        "n_paths": config.n_paths,
        "lambdas": config.lambda_grid.values,
    }


class Runner:
    def __init__(self, config: ScenarioConfig, out_dir: Path, executor=None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.model = config.build_model()
        self.grid = config.grid.build()
        self.engine = config.engine.build()
        self.executor = executor
        self.oracle = oracle_for(self.model, self.grid)
        self.verdicts: dict[str, str] = {}

    def _plan(self) -> SimulationPlan:
        return SimulationPlan(
            self.grid, self.config.n_paths, RngStream(self.config.seed), self.engine, self.executor
        )

    def _report(self, subcommand: str) -> ScenarioReport:
        return ScenarioReport(
            name=self.config.name,
            subcommand=subcommand,
            seed=self.config.seed,
            metadata=_metadata(self.config, self.model, self.engine),
        )

    def _write(self, report: ScenarioReport) -> list[Path]:
        return report.write(self.out_dir, self.config.outputs.formats)

    # simulate

    def _raw_quantities(self, lam: float, plan: SimulationPlan) -> dict[str, np.ndarray]:
        model = self.model

        def block(index, size, block_rng):
            w, m = sample_model_paths(model, plan.grid, size, block_rng)
            shifted = build_u(model, lam, w, m)
            u = shifted.drift.density
            return {
                "cm_norm_sq": np.sum(u**2, axis=-1) * plan.grid.dt,
                "log_rho": rho(shifted.drift, w).log_value,
                "observation_terminal": shifted.observation.terminal,
            }

        return plan.run(block)

    def simulate(self) -> ScenarioReport:
        plan = self._plan()
        report = self._report("simulate")
        records = []
        fieldnames = None
        for lam in self.config.lambda_grid.values:
            if self.model.observation_form:
                q = path_quantities(self.model, lam, plan)
                check_collapse(q, lam)
            else:
                q = self._raw_quantities(lam, plan)
            keys = sorted(q)
            fieldnames = fieldnames or ["path", "lambda"] + keys
            for i in range(self.config.n_paths):
                record = {"path": i, "lambda": lam}
                for key in keys:
                    value = q[key][i]
                    record[key] = bool(value) if q[key].dtype == bool else value
                records.append(record)
            for key in keys:
                if q[key].dtype == bool:
                    continue
                report.add(ReportRow.from_estimate(f"mean_{key}", lam, mean_estimate(q[key])))
        path = write_records(
            self.out_dir / f"{self.config.name}-simulate-paths.csv", records, fieldnames
        )
        log.info(f"Wrote {path}")
        self._write(report)
        return report

    # verify

    def verify(self) -> ScenarioReport:
        report = self._report("verify")
        report.extend(Verifier(self.config, self.executor).run())
        self._write(report)
        return report

    # sweep

    def _oracle_row(self, quantity, lam, est, oracle_name=None) -> ReportRow:
        return oracle_row(self.oracle, self.config.tolerances, quantity, lam, est, oracle_name)

    def _derivative_rows(self, name, lam, dr, rel_tol) -> list[ReportRow]:
        return [
            ReportRow.from_estimate(
                name, lam, dr.formula, self.oracle.value(name, lam), passed=dr.agrees(rel_tol)
            ),
            ReportRow.from_estimate(f"{name}_fd", lam, dr.finite_difference),
        ]

    def _sweep_at(self, lam: float, plan: SimulationPlan, groups: set[str]) -> list[ReportRow]:
        tol = self.config.tolerances
        model = self.model
        rows = []
        if "girsanov" in groups:
            est = novikov_check(model, lam, plan)
            rows.append(
                ReportRow.from_estimate(
                    "novikov",
                    lam,
                    est,
                    1.0,
                    passed=est.within(1.0, se_multiplier=tol.se_multiplier)
                    if model.novikov_bounded
                    else None,
                )
            )
        if groups & {"entropy", "errors", "gap"}:
            q = path_quantities(model, lam, plan, noncausal="errors" in groups)
            check_collapse(q, lam)
            if "entropy" in groups:
                ent = entropy_from_quantities(lam, q)
                rows += [
                    self._oracle_row("theta", lam, ent.theta_direct),
                    self._oracle_row("theta_rho", lam, ent.theta_rho),
                ]
            if "errors" in groups:
                causal = errors_from_quantities(lam, q, "causal")
                noncausal = errors_from_quantities(lam, q, "noncausal")
                rows += [
                    self._oracle_row("causal_mmse", lam, causal.drift),
                    self._oracle_row("causal_mmse_signal", lam, causal.signal),
                    self._oracle_row("nce", lam, noncausal.drift),
                    self._oracle_row("nce_signal", lam, noncausal.signal),
                ]
            if "gap" in groups:
                gap = mean_estimate(0.5 * (q["cm_norm_sq"] - q["filtered_energy"]))
                rows.append(self._oracle_row("gap", lam, gap))
        if "information" in groups:
            info = mutual_information(model, lam, plan)
            rows += [
                self._oracle_row("theta_joint", lam, info.theta_joint),
                self._oracle_row("mutual_information", lam, info.information),
                self._oracle_row("duncan", lam, info.duncan),
            ]
        if "derivatives" in groups:
            rows += self._derivative_rows(
                "dtheta", lam, entropy_derivative(model, lam, plan), tol.derivative_first
            )
            rows += self._derivative_rows(
                "d2theta", lam, entropy_second_derivative(model, lam, plan), tol.derivative_second
            )
        if "tau" in groups:
            tau = tau_derivatives(model, lam, plan)
            rows += self._derivative_rows("dtau", lam, tau.first, tol.derivative_first)
            rows += self._derivative_rows("d2tau", lam, tau.second, tol.derivative_second)
            rows.append(ReportRow.from_estimate("d2tau_three_term", lam, tau.second_three_term))
        if "beta" in groups:
            beta = beta_profile(model, lam, plan)
            rows.append(self._oracle_row("beta", lam, beta.beta))
            rows += self._derivative_rows("dbeta", lam, beta.derivative, tol.derivative_first)
        if "convexity" in groups:
            probe = convexity_probe(model, lam, plan)
            rows.append(ReportRow.from_estimate("convexity", lam, probe.second_derivative))
            self.verdicts[repr(lam)] = probe.verdict
            log.info(f"Convexity verdict at lambda={lam}: {probe.verdict}")
        if "information_curvature" in groups:
            rows += self._derivative_rows(
                "d2I",
                lam,
                mutual_information_second_derivative(model, lam, plan),
                tol.derivative_second,
            )
        return rows

    def sweep(self) -> ScenarioReport:
        plan = self._plan()
        report = self._report("sweep")
        groups = set(self.config.sweep)
        if not self.model.observation_form:
            skipped = sorted(groups & _FILTER_GROUPS)
            if skipped:
                log.info(f"Raw drift '{self.model.kind}': skipping sweep groups {skipped}")
            groups -= _FILTER_GROUPS
        lambdas = self.config.lambda_grid.values
        self.verdicts = {}
        for lam in lambdas:
            log.info(f"Sweeping lambda={lam}")
            report.extend(self._sweep_at(lam, plan, groups))
        if self.verdicts:
            report.metadata["convexity"] = self.verdicts
        if "immse" in groups:
            tol = self.config.tolerances
            for row in immse_sweep(self.model, lambdas, plan):
                report.add(self._oracle_row("dI_fd", row.lam, row.derivative_fd, "dI"))
                diff = row.derivative_mmse - row.derivative_fd
                agrees = abs(diff.value) <= max(
                    tol.se_multiplier * diff.stderr,
                    tol.derivative_first * abs(row.derivative_fd.value),
                )
                report.add(
                    ReportRow.from_estimate(
                        "dI_mmse",
                        row.lam,
                        row.derivative_mmse,
                        self.oracle.value("dI", row.lam),
                        passed=agrees if row.applies else None,
                    )
                )
        if "continuity" in groups and len(lambdas) > 1:
            for row in lambda_continuity_sweep(self.model, lambdas, plan):
                report.add(
                    ReportRow.from_estimate("continuity_drift", row.lam_right, row.drift_distance)
                )
                report.add(
                    ReportRow.from_estimate(
                        "continuity_stochastic", row.lam_right, row.stochastic_distance
                    )
                )
        if "beta" in groups:
            curvature = beta_curvature_at_zero(self.model, plan)
            report.add(ReportRow.from_estimate("beta_curvature_zero", 0.0, curvature.second_difference))
            report.add(ReportRow.from_estimate("beta_curvature_reference", 0.0, curvature.reference))
        self._write(report)
        return report

    # report

    def summarize(self) -> ScenarioReport:
        found = []
        for subcommand in ("simulate", "verify", "sweep"):
            path = self.out_dir / f"{self.config.name}-{subcommand}.json"
            if path.exists():
                try:
                    found.append(load_report(path))
                except ValueError as e:
                    raise ScenarioError(f"Cannot read {path}: {e}") from e
        if not found:
            raise ScenarioError(
                f"No simulate/verify/sweep reports for '{self.config.name}' in {self.out_dir}"
            )
        summary = aggregate(self.config.name, self.config.seed, found)
        written = self._write(summary)
        for path in sorted(self.out_dir.glob(f"{self.config.name}-*")):
            if path.suffix in (".csv", ".json") and path not in written:
                written.append(path)
        for path in written:
            log.info(f"Wrote {write_digest(path)}")
        return summary

    def run(self, subcommand: str) -> ScenarioReport:
        if subcommand not in SUBCOMMANDS:
            raise ValueError(f"Unknown subcommand '{subcommand}'")
        start = time.perf_counter()
        report = {
            "simulate": self.simulate,
            "verify": self.verify,
            "sweep": self.sweep,
            "report": self.summarize,
        }[subcommand]()
        # Timings go to the log only; report files stay reproducible.
        log.info(f"'{subcommand}' finished in {time.perf_counter() - start:.1f}s")
        report.log_summary()
        return report


def run_scenario(
    config: ScenarioConfig, subcommand: str, out_dir: Path, threads: int = 1
) -> ScenarioReport:
    with worker_pool(threads) as executor:
        return Runner(config, out_dir, executor).run(subcommand)
