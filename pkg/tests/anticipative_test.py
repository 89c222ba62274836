import unittest

import numpy as np
import pytest

from wienerlab.anticipative import beta_curvature_at_zero, beta_profile, smoothed_drift_derivative
from wienerlab.drifts import (
    ChannelDrift,
    DeterministicDrift,
    LambdaParametrization,
    MarkovDrift,
    RandomParameter,
    build_u,
)
from wienerlab.filtering import QuadratureEngine
from wienerlab.montecarlo import SimulationPlan, sample_model_paths
from wienerlab.wiener import RngStream, TimeGrid

GRID = TimeGrid(32)


def _observation(model, lam, n_paths=4, seed=0):
    w, m = sample_model_paths(model, GRID, n_paths, RngStream(seed))
    return build_u(model, lam, w, m).observation


class SmoothedDerivativeTest(unittest.TestCase):
    def _check(self, model, lam):
        obs = _observation(model, lam)
        formula, fd = smoothed_drift_derivative(model, lam, obs, QuadratureEngine(48))
        self.assertEqual(formula.shape, (4, GRID.n_steps))
        np.testing.assert_allclose(formula, fd, rtol=1e-5, atol=1e-6, err_msg=model.kind)
        return formula

    def test_gaussian_channel(self):
        self._check(ChannelDrift(parameter=RandomParameter(law="gaussian", sigma=1.0)), 0.8)

    def test_gaussian_channel_power(self):
        model = ChannelDrift(
            parameter=RandomParameter(law="gaussian", sigma=0.7),
            parametrization=LambdaParametrization("power", 2),
        )
        self._check(model, 1.1)

    def test_uniform_channel(self):
        self._check(ChannelDrift(parameter=RandomParameter(law="uniform", low=-1.0, high=2.0)), 1.0)

    def test_markov(self):
        model = MarkovDrift("tanh")
        formula = self._check(model, 1.3)
        obs = _observation(model, 1.3)
        # The smoothed drift is c f(U), so its lambda derivative is f(U).
        np.testing.assert_allclose(formula, np.tanh(obs.values[:, :-1]), atol=1e-10)

    def test_deterministic(self):
        model = DeterministicDrift(profile="linear")
        formula = self._check(model, 0.5)
        np.testing.assert_allclose(formula, np.broadcast_to(GRID.left_nodes, formula.shape))


class BetaProfileTest(unittest.TestCase):
    def test_deterministic(self):
        model = DeterministicDrift(profile="constant", scale=1.0)
        plan = SimulationPlan(GRID, 1024, RngStream(1), QuadratureEngine(4))
        report = beta_profile(model, 1.0, plan)
        self.assertAlmostEqual(report.beta.value, 1.0, places=12)
        np.testing.assert_allclose(report.profile, 1.0)
        np.testing.assert_allclose(report.profile_stderr, 0.0, atol=1e-12)
        self.assertAlmostEqual(report.derivative.finite_difference.value, 2.0, places=10)
        # Formula per path is 2 + W(1).
        self.assertTrue(report.derivative.formula.within(2.0, rel_tol=0.2))
        self.assertTrue(report.derivative.agrees(0.2))

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_gaussian_channel(self):
        # beta = lambda^4 sigma^4 / (1 + lambda^2 sigma^2) = 1/2 at lambda = sigma = 1.
        model = ChannelDrift(parameter=RandomParameter(law="gaussian", sigma=1.0))
        plan = SimulationPlan(GRID, 8192, RngStream(2), QuadratureEngine(32))
        report = beta_profile(model, 1.0, plan)
        self.assertAlmostEqual(report.beta.value, 0.5, delta=0.06)
        # The smoothed drift only depends on U(1): the profile is flat.
        np.testing.assert_allclose(report.profile, report.profile[0], rtol=1e-10)
        # d beta = 4 sigma^4 lambda^3 (1 + lambda^2 sigma^2 / 2) / (1 + lambda^2 sigma^2)^2 = 1.5
        self.assertAlmostEqual(report.derivative.finite_difference.value, 1.5, delta=0.2)
        self.assertAlmostEqual(report.derivative.formula.value, 1.5, delta=0.2)


class BetaCurvatureTest(unittest.TestCase):
    def test_deterministic_discrepancy_is_flagged(self):
        model = DeterministicDrift(profile="constant", scale=2.0)
        plan = SimulationPlan(GRID, 128, RngStream(3), QuadratureEngine(4))
        with self.assertLogs("wienerlab.anticipative", level="WARNING"):
            report = beta_curvature_at_zero(model, plan)
        # beta(lambda) = 4 lambda^2 exactly.
        self.assertAlmostEqual(report.second_difference.value, 8.0, places=8)
        self.assertAlmostEqual(report.reference.value, 4.0, places=12)
        self.assertTrue(report.discrepancy)


if __name__ == "__main__":
    unittest.main()
