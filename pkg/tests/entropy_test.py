import math
import unittest

import numpy as np
import pytest

from wienerlab._constants import (
    SE_MULTIPLIER,
    TOL_DERIVATIVE_FIRST,
    TOL_DERIVATIVE_SECOND,
    TOL_ORACLE_RELATIVE,
)
from wienerlab.drifts import (
    ChannelDrift,
    DeterministicDrift,
    PathFunctionalDrift,
    RandomParameter,
    ZeroDrift,
    build_u,
)
from wienerlab.entropy import (
    causal_mmse,
    convexity_probe,
    entropy,
    entropy_derivative,
    entropy_second_derivative,
    errors_from_quantities,
    immse_sweep,
    invertibility_gap,
    lambda_continuity_sweep,
    mutual_information,
    mutual_information_second_derivative,
    noncausal_error,
    path_quantities,
    tau_derivatives,
)
from wienerlab.errors import RawDriftError
from wienerlab.filtering import QuadratureEngine, run_filter, smoother
from wienerlab.montecarlo import SimulationPlan, sample_model_paths
from wienerlab.oracles import oracle_for
from wienerlab.stats import mean_estimate
from wienerlab.wiener import RngStream, TimeGrid


def _plan(n_paths, seed, n_steps=32, nodes=4):
    return SimulationPlan(TimeGrid(n_steps), n_paths, RngStream(seed), QuadratureEngine(nodes))


class DeterministicEntropyTest(unittest.TestCase):
    """A deterministic drift is revealed by U, so most quantities are exact."""

    MODEL = DeterministicDrift(profile="constant", scale=1.0)

    def test_path_quantities_keys(self):
        q = path_quantities(self.MODEL, 1.0, _plan(70, 1))
        for key in (
            "cm_norm_sq",
            "filtered_energy",
            "neg_log_rho_hat",
            "accounting_residual",
            "causal_error_drift",
            "noncausal_error_signal",
            "collapsed",
        ):
            self.assertIn(key, q)
            self.assertEqual(q[key].shape, (70,))
        self.assertNotIn("noncausal_error_drift", path_quantities(self.MODEL, 1.0, _plan(8, 1), noncausal=False))

    def test_entropy(self):
        report = entropy(self.MODEL, 1.0, _plan(2048, 2))
        self.assertAlmostEqual(report.theta_direct.value, 0.5, places=12)
        self.assertAlmostEqual(report.theta_direct.stderr, 0.0, places=12)
        self.assertTrue(report.theta_rho.within(0.5, se_multiplier=SE_MULTIPLIER))
        self.assertEqual(report.collapsed_paths, 0)

    def test_errors_and_gap_vanish(self):
        plan = _plan(128, 3)
        causal = causal_mmse(self.MODEL, 0.7, plan)
        noncausal = noncausal_error(self.MODEL, 0.7, plan)
        for est in (causal.drift, causal.signal, noncausal.drift, noncausal.signal):
            self.assertLess(abs(est.value), 1e-20)
        self.assertLess(abs(invertibility_gap(self.MODEL, 0.7, plan).value), 1e-12)

    def test_mutual_information_vanishes(self):
        info = mutual_information(self.MODEL, 1.3, _plan(128, 4))
        self.assertAlmostEqual(info.theta_joint.value, 0.5 * 1.3**2, places=12)
        self.assertAlmostEqual(info.tau.value, 0.5 * 1.3**2, places=12)
        self.assertEqual(info.information.value, 0.0)
        self.assertEqual(info.duncan.value, 0.0)

    def test_first_derivative(self):
        report = entropy_derivative(self.MODEL, 1.0, _plan(4096, 5))
        self.assertAlmostEqual(report.finite_difference.value, 1.0, places=10)
        self.assertTrue(report.formula.within(1.0, rel_tol=TOL_DERIVATIVE_FIRST))
        self.assertTrue(report.agrees(TOL_DERIVATIVE_FIRST))

    def test_second_derivative(self):
        report = entropy_second_derivative(self.MODEL, 0.5, _plan(8192, 6))
        self.assertAlmostEqual(report.finite_difference.value, 1.0, places=8)
        self.assertTrue(report.formula.within(1.0, rel_tol=TOL_DERIVATIVE_SECOND))
        self.assertTrue(report.agrees(TOL_DERIVATIVE_SECOND))

    def test_tau_derivatives(self):
        report = tau_derivatives(self.MODEL, 0.5, _plan(1024, 7))
        self.assertAlmostEqual(report.tau.value, 0.125, places=12)
        self.assertAlmostEqual(report.first.finite_difference.value, 0.5, places=10)
        self.assertAlmostEqual(report.second.finite_difference.value, 1.0, places=8)
        # Both second-order fields coincide for a drift without w-dependence.
        self.assertAlmostEqual(
            report.second.formula.value, report.second_three_term.value, places=6
        )

    def test_information_curvature_vanishes(self):
        report = mutual_information_second_derivative(self.MODEL, 1.0, _plan(128, 8))
        self.assertLess(abs(report.formula.value), 1e-8)
        self.assertEqual(report.finite_difference.value, 0.0)

    def test_immse_rows(self):
        rows = immse_sweep(self.MODEL, [0.5, 1.0], _plan(128, 9))
        self.assertEqual([r.lam for r in rows], [0.5, 1.0])
        for row in rows:
            self.assertTrue(row.applies)
            self.assertEqual(row.information.value, 0.0)
            self.assertEqual(row.derivative_fd.value, 0.0)
            self.assertLess(abs(row.derivative_mmse.value), 1e-20)

    def test_continuity(self):
        rows = lambda_continuity_sweep(self.MODEL, [0.0, 0.5, 1.5], _plan(2048, 10))
        self.assertEqual(len(rows), 2)
        self.assertAlmostEqual(rows[0].drift_distance.value, 0.5, places=10)
        self.assertAlmostEqual(rows[1].drift_distance.value, 1.0, places=10)
        self.assertEqual(rows[1].spacing, 1.0)
        # int f dZ = lambda W(1), so the distance is spacing * sqrt(E W(1)^2).
        self.assertTrue(rows[1].stochastic_distance.within(1.0, se_multiplier=SE_MULTIPLIER))

    def test_convexity(self):
        probe = convexity_probe(self.MODEL, 0.5, _plan(2048, 11))
        self.assertEqual(probe.verdict, "convex")
        self.assertTrue(probe.energy_term.within(1.0, se_multiplier=SE_MULTIPLIER))


class ZeroEntropyTest(unittest.TestCase):
    def test_everything_vanishes(self):
        plan = _plan(128, 12)
        report = entropy(ZeroDrift(), 1.0, plan)
        self.assertEqual(report.theta_direct.value, 0.0)
        self.assertEqual(report.theta_rho.value, 0.0)
        self.assertEqual(convexity_probe(ZeroDrift(), 1.0, plan).verdict, "inconclusive")

    def test_raw_drift_rejected(self):
        with self.assertRaises(RawDriftError):
            entropy(PathFunctionalDrift(), 1.0, _plan(8, 0))


@pytest.mark.slow
class GaussianChannelTest(unittest.TestCase):
    """Closed forms at c = sigma = 1: theta = (1 - ln 2) / 2, I = ln(2) / 2."""

    MODEL = ChannelDrift(parameter=RandomParameter(law="gaussian", sigma=1.0))

    def _plan(self, seed, n_paths=4096):
        return _plan(n_paths, seed, n_steps=64, nodes=24)

    def _near(self, est, quantity, lam, rel_tol=TOL_ORACLE_RELATIVE):
        oracle = oracle_for(self.MODEL, TimeGrid(64)).value(quantity, lam)
        self.assertTrue(
            est.within(oracle, rel_tol=rel_tol, se_multiplier=SE_MULTIPLIER),
            f"{quantity} at lambda={lam}: {est} vs {oracle}",
        )

    @pytest.mark.timeout(600)
    def test_entropy(self):
        report = entropy(self.MODEL, 1.0, self._plan(13))
        self._near(report.theta_direct, "theta", 1.0)
        self._near(report.theta_rho, "theta_rho", 1.0)
        self.assertTrue(report.agreement)

    @pytest.mark.timeout(600)
    def test_mutual_information(self):
        info = mutual_information(self.MODEL, 1.0, self._plan(14))
        self._near(info.information, "mutual_information", 1.0)
        self._near(info.duncan, "duncan", 1.0)
        self._near(info.theta_joint, "theta_joint", 1.0)

    @pytest.mark.timeout(600)
    def test_estimation_errors(self):
        q = path_quantities(self.MODEL, 1.0, self._plan(15))
        causal = errors_from_quantities(1.0, q, "causal")
        noncausal = errors_from_quantities(1.0, q, "noncausal")
        self._near(causal.drift, "causal_mmse", 1.0)
        self._near(noncausal.drift, "nce", 1.0)
        # Conditioning on the whole path never loses to conditioning on its past.
        excess = mean_estimate(q["causal_error_drift"] - q["noncausal_error_drift"])
        self.assertGreaterEqual(excess.value, -SE_MULTIPLIER * excess.stderr)

    @pytest.mark.timeout(600)
    def test_smoothing_explains_more_energy(self):
        plan = self._plan(16, n_paths=2048)

        def block(index, size, block_rng):
            w, m = sample_model_paths(self.MODEL, plan.grid, size, block_rng)
            obs = build_u(self.MODEL, 1.0, w, m).observation
            filtered = run_filter(self.MODEL, 1.0, obs, plan.engine).filtered_drift
            smoothed = smoother(self.MODEL, 1.0, obs, plan.engine).smoothed_drift
            return {"gain": np.sum(smoothed**2 - filtered**2, axis=-1) * plan.grid.dt}

        gain = mean_estimate(plan.run(block)["gain"])
        self.assertGreaterEqual(gain.value, -SE_MULTIPLIER * gain.stderr)
        # E int E[u|U(1)]^2 = 1/2 and E int E[u|U(t)]^2 = 1 - ln 2.
        self.assertTrue(gain.within(math.log(2.0) - 0.5, rel_tol=TOL_ORACLE_RELATIVE))

    @pytest.mark.timeout(600)
    def test_entropy_derivative(self):
        report = entropy_derivative(self.MODEL, 0.5, self._plan(17))
        self.assertTrue(report.agrees(TOL_DERIVATIVE_FIRST), report)
        self._near(report.formula, "dtheta", 0.5, rel_tol=TOL_DERIVATIVE_FIRST)
        self._near(report.finite_difference, "dtheta", 0.5, rel_tol=TOL_DERIVATIVE_FIRST)

    @pytest.mark.timeout(900)
    def test_tau_first_derivative(self):
        report = tau_derivatives(self.MODEL, 1.0, self._plan(18))
        self.assertTrue(report.first.agrees(TOL_DERIVATIVE_FIRST), report.first)
        self._near(report.first.formula, "dtau", 1.0, rel_tol=TOL_DERIVATIVE_FIRST)
        self._near(report.first.finite_difference, "dtau", 1.0, rel_tol=TOL_DERIVATIVE_FIRST)


if __name__ == "__main__":
    unittest.main()
