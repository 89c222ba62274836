import unittest

import numpy as np

from wienerlab.drifts import LambdaParametrization, MarkovDrift, PathFunctionalDrift, ZeroDrift
from wienerlab.errors import SingularOperatorError
from wienerlab.malliavin import (
    JacobianMatrix,
    carleman_check,
    divergence,
    gradient_matrix,
    quasi_nilpotency_defect,
    resolvent_apply,
    resolvent_residual,
)
from wienerlab.wiener import RngStream, TimeGrid, ito_integral, sample_wiener

GRID = TimeGrid(16)


def _paths(n_paths=3, seed=2):
    return sample_wiener(GRID, RngStream(seed), n_paths)


class GradientMatrixTest(unittest.TestCase):
    MODELS = [
        MarkovDrift("tanh"),
        MarkovDrift("sin", parametrization=LambdaParametrization("power", 2)),
        PathFunctionalDrift("sin"),
    ]

    def test_analytic_matches_finite_difference(self):
        w = _paths()
        for model in self.MODELS:
            for field in ("drift", "first_derivative"):
                analytic = gradient_matrix(model, 0.8, w, field=field)
                fd = gradient_matrix(model, 0.8, w, mode="finite_difference", field=field)
                self.assertEqual(analytic.matrix.shape, (3, 16, 16))
                np.testing.assert_allclose(
                    analytic.matrix, fd.matrix, atol=1e-8, err_msg=f"{model.kind}/{field}"
                )

    def test_adapted_drift_is_strictly_lower(self):
        w = _paths()
        for model in self.MODELS:
            jac = gradient_matrix(model, 1.0, w)
            self.assertTrue(jac.is_strictly_lower())
            np.testing.assert_array_equal(quasi_nilpotency_defect(jac), 0.0)
            np.testing.assert_array_equal(jac.diagonal, 0.0)

    def test_zero_drift(self):
        jac = gradient_matrix(ZeroDrift(), 1.0, _paths())
        np.testing.assert_array_equal(jac.matrix, 0.0)
        np.testing.assert_array_equal(jac.hs_norm_sq, 0.0)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            gradient_matrix(ZeroDrift(), 1.0, _paths(), mode="symbolic")
        with self.assertRaises(ValueError):
            gradient_matrix(ZeroDrift(), 1.0, _paths(), field="second_derivative")


class DivergenceTest(unittest.TestCase):
    def test_adapted_field_is_ito_sum(self):
        model = MarkovDrift("tanh")
        w = _paths()
        traj = model.trajectory(1.0, w)
        jac = gradient_matrix(model, 1.0, w)
        np.testing.assert_allclose(divergence(traj.u, w, jac), ito_integral(traj.u, w))
        np.testing.assert_allclose(divergence(traj.u, w), ito_integral(traj.u, w))

    def test_terminal_value_field(self):
        # v_dot(t) = W(1) on every step: delta(v) = W(1)^2 - 1.
        w = _paths()
        v = np.repeat(w.terminal[:, None], GRID.n_steps, axis=1)
        jac = JacobianMatrix(GRID, np.full((GRID.n_steps, GRID.n_steps), GRID.dt))
        np.testing.assert_allclose(divergence(v, w, jac), w.terminal**2 - 1.0)


class ResolventTest(unittest.TestCase):
    def test_lower_triangular(self):
        model = MarkovDrift("tanh")
        w = _paths()
        jac = gradient_matrix(model, 2.0, w)
        v = np.cos(GRID.left_nodes)
        x = resolvent_apply(jac, v)
        np.testing.assert_array_less(resolvent_residual(jac, v, x), 1e-12)
        # Agrees with the matrix-free forward substitution.
        traj = model.trajectory(2.0, w)
        np.testing.assert_allclose(x, model.solve_resolvent(traj, v), atol=1e-12)

    def test_full_matrix(self):
        a = np.array([[0.0, 0.5], [0.25, 0.0]])
        jac = JacobianMatrix(TimeGrid(2), a)
        v = np.array([1.0, 2.0])
        x = resolvent_apply(jac, v)
        np.testing.assert_allclose((np.eye(2) + a) @ x, v)

    def test_singular(self):
        jac = JacobianMatrix(TimeGrid(2), -np.eye(2))
        with self.assertRaises(SingularOperatorError):
            resolvent_apply(jac, np.ones(2))


class CarlemanTest(unittest.TestCase):
    def test_single_large_entry(self):
        a = np.array([[0.0, 0.0], [10.0, 0.0]])
        (report,) = carleman_check(JacobianMatrix(TimeGrid(2), a))
        expected = np.linalg.norm(np.linalg.inv(np.eye(2) + a), 2)
        self.assertAlmostEqual(report.op_norm, expected, places=6)
        self.assertAlmostEqual(report.op_norm, 10.099, places=3)
        self.assertTrue(report.converged)
        self.assertTrue(report.satisfied)
        self.assertAlmostEqual(report.bound, np.exp(50.5))

    def test_zero_matrix(self):
        (report,) = carleman_check(JacobianMatrix(TimeGrid(4), np.zeros((4, 4))))
        self.assertAlmostEqual(report.op_norm, 1.0)
        self.assertAlmostEqual(report.bound, np.exp(0.5))
        self.assertTrue(report.satisfied)

    def test_batch(self):
        jac = gradient_matrix(MarkovDrift("sin"), 3.0, _paths())
        reports = carleman_check(jac)
        self.assertEqual(len(reports), 3)
        for report in reports:
            self.assertTrue(report.satisfied)

    def test_singular(self):
        with self.assertRaises(SingularOperatorError):
            carleman_check(JacobianMatrix(TimeGrid(2), -np.eye(2)))


if __name__ == "__main__":
    unittest.main()
