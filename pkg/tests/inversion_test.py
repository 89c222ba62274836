import unittest

import numpy as np

from wienerlab.drifts import (
    ChannelDrift,
    DeterministicDrift,
    LambdaParametrization,
    MarkovDrift,
    PathFunctionalDrift,
    RandomParameter,
    ZeroDrift,
    build_u,
)
from wienerlab.errors import DriftModelError
from wienerlab.filtering import QuadratureEngine
from wienerlab.inversion import homotopy_invertibility, invert_shift, refinement_study
from wienerlab.montecarlo import SimulationPlan, sample_model_paths
from wienerlab.wiener import RngStream, TimeGrid, sample_wiener

GRID = TimeGrid(128)


class InvertShiftTest(unittest.TestCase):
    def test_roundtrip(self):
        w = sample_wiener(GRID, RngStream(0), 8)
        for model in (
            MarkovDrift("tanh"),
            MarkovDrift("sin", parametrization=LambdaParametrization("power", 2)),
            PathFunctionalDrift("sin"),
            PathFunctionalDrift("identity"),
            DeterministicDrift(profile="cosine"),
        ):
            solve = invert_shift(model, 1.5, w)
            self.assertTrue(np.all(solve.converged), model.kind)
            np.testing.assert_array_less(solve.roundtrip_sup, 1e-10)
            # U(V) = w.
            forward = build_u(model, 1.5, solve.path).observation
            np.testing.assert_allclose(forward.values, w.values, atol=1e-10, err_msg=model.kind)

    def test_channel_needs_parameter(self):
        model = ChannelDrift()
        w, m = sample_model_paths(model, GRID, 4, RngStream(1))
        solve = invert_shift(model, 1.0, w, m)
        np.testing.assert_allclose(solve.path.values, w.values - np.outer(m, GRID.nodes), atol=1e-12)
        with self.assertRaises(DriftModelError):
            invert_shift(model, 1.0, w)

    def test_zero(self):
        w = sample_wiener(GRID, RngStream(2), 3)
        solve = invert_shift(ZeroDrift(), 1.0, w)
        np.testing.assert_array_equal(solve.path.increments, w.increments)
        np.testing.assert_array_equal(solve.roundtrip_sup, 0.0)

    def test_unbounded_inverse_is_not_converged(self):
        w = sample_wiener(GRID, RngStream(3), 2)
        with self.assertLogs("wienerlab.inversion", level="WARNING"):
            solve = invert_shift(PathFunctionalDrift("identity"), -40.0, w)
        self.assertFalse(np.any(solve.converged))


class RefinementTest(unittest.TestCase):
    def test_markov_converges(self):
        report = refinement_study(MarkovDrift("sin"), 2.0, [8, 32, 128], 64, RngStream(4))
        self.assertEqual(report.reference_steps, 512)
        values = [e.value for e in report.strong_errors]
        self.assertGreater(values[0], values[1])
        self.assertGreater(values[1], values[2])
        for order in report.orders:
            self.assertGreater(order, 0.3)

    def test_raw_drift_converges(self):
        report = refinement_study(PathFunctionalDrift("tanh"), 1.0, [16, 64], 64, RngStream(5))
        self.assertEqual(len(report.orders), 1)
        self.assertGreater(report.orders[0], 0.3)

    def test_zero_is_exact(self):
        report = refinement_study(ZeroDrift(), 1.0, [4, 16], 8, RngStream(6))
        # Only rounding differences between coarse and fine sums remain.
        for err in report.strong_errors:
            self.assertLess(err.value, 1e-12)

    def test_levels_must_divide(self):
        with self.assertRaises(ValueError):
            refinement_study(ZeroDrift(), 1.0, [3, 8], 4, RngStream(0))


class HomotopyTest(unittest.TestCase):
    def test_deterministic_is_invertible(self):
        plan = SimulationPlan(TimeGrid(32), 128, RngStream(7), QuadratureEngine(4))
        report = homotopy_invertibility(DeterministicDrift(), [0.0, 0.5, 1.0], plan)
        self.assertTrue(report.invertible)
        self.assertEqual([row.lam for row in report.rows], [0.0, 0.5, 1.0])
        for row in report.rows:
            self.assertLess(abs(row.gap.value), 1e-12)
        self.assertLess(report.reconstruction_residual.value, 1e-12)
        self.assertGreater(report.rows[-1].integrand.value, 0.0)

    def test_gaussian_channel_is_not_invertible(self):
        model = ChannelDrift(parameter=RandomParameter(law="gaussian", sigma=1.0))
        plan = SimulationPlan(TimeGrid(32), 1024, RngStream(8), QuadratureEngine(24))
        report = homotopy_invertibility(model, [0.0, 1.0], plan)
        self.assertFalse(report.invertible)
        self.assertEqual(report.rows[0].gap.value, 0.0)
        # gap = I = ln(2) / 2 at lambda = 1.
        self.assertAlmostEqual(report.rows[1].gap.value, 0.5 * np.log(2.0), delta=0.12)
        self.assertGreater(report.reconstruction_residual.value, 0.1)
        self.assertGreaterEqual(report.rows[1].integrand_max, report.rows[1].integrand_q99)

    def test_needs_linear_parametrization(self):
        model = MarkovDrift(parametrization=LambdaParametrization("power", 2))
        plan = SimulationPlan(TimeGrid(8), 8, RngStream(0))
        with self.assertRaises(DriftModelError):
            homotopy_invertibility(model, [0.5], plan)


if __name__ == "__main__":
    unittest.main()
