import unittest

import numpy as np
import pytest

from wienerlab._constants import (
    SE_MULTIPLIER,
    TOL_INNOVATION_LAG1,
    TOL_INNOVATION_VARIANCE,
)
from wienerlab.drifts import (
    ChannelDrift,
    DeterministicDrift,
    MarkovDrift,
    PathFunctionalDrift,
    RandomParameter,
    ZeroDrift,
    build_u,
)
from wienerlab.errors import RawDriftError
from wienerlab.filtering import (
    ParticleEngine,
    QuadratureEngine,
    RevealedEngine,
    conditional_expectation,
    conditional_rho_hat,
    innovation,
    posterior,
    quadrature_filter,
    run_filter,
    smoother,
    systematic_resample,
)
from wienerlab.montecarlo import sample_model_paths
from wienerlab.stats import mean_estimate
from wienerlab.wiener import RngStream, TimeGrid, WienerPath

GRID = TimeGrid(64)
LAM = 1.2
SIGMA = 1.5


def _channel_observation(n_paths=8, seed=4):
    model = ChannelDrift(parameter=RandomParameter(law="gaussian", sigma=SIGMA))
    w, m = sample_model_paths(model, GRID, n_paths, RngStream(seed))
    return model, build_u(model, LAM, w, m)


def _kalman_mean(obs_values, t):
    """E[m | U up to t] for m ~ N(0, SIGMA^2) and dU = LAM m dt + dW."""
    return LAM * obs_values / (1.0 / SIGMA**2 + LAM**2 * t)


class QuadratureFilterTest(unittest.TestCase):
    def test_matches_kalman(self):
        model, shifted = _channel_observation()
        obs = shifted.observation
        out = quadrature_filter(model, LAM, obs, n_nodes=64)
        expected = _kalman_mean(obs.values[:, :-1], GRID.left_nodes)
        np.testing.assert_allclose(out.filtered_signal, expected, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(out.filtered_drift, LAM * expected, rtol=1e-7, atol=1e-9)

    def test_log_likelihood_matches_closed_form(self):
        model, shifted = _channel_observation()
        obs = shifted.observation
        out = quadrature_filter(model, LAM, obs)
        np.testing.assert_allclose(
            out.log_likelihood, model.log_density(LAM, obs), rtol=1e-8, atol=1e-10
        )
        self.assertFalse(np.any(out.collapsed))
        np.testing.assert_array_equal(out.n_resamples, 0)

    def test_degenerate_accounting_is_exact(self):
        model = DeterministicDrift(profile="cosine", scale=2.0)
        w, m = sample_model_paths(model, GRID, 8, RngStream(1))
        obs = build_u(model, 0.7, w, m).observation
        out = run_filter(model, 0.7, obs, QuadratureEngine(8))
        np.testing.assert_allclose(out.filtered_drift, build_u(model, 0.7, w, m).drift.density)
        rho_hat = conditional_rho_hat(out, obs)
        np.testing.assert_array_less(rho_hat.accounting_residual, 1e-10)
        # The innovation of a known drift is the noise itself.
        np.testing.assert_allclose(innovation(out, obs).increments, w.increments, atol=1e-13)

    def test_zero_model(self):
        model = ZeroDrift()
        w, _ = sample_model_paths(model, GRID, 4, RngStream(2))
        out = run_filter(model, 1.0, w, QuadratureEngine())
        np.testing.assert_array_equal(out.filtered_signal, 0.0)
        np.testing.assert_array_equal(out.log_likelihood, 0.0)
        np.testing.assert_array_equal(conditional_rho_hat(out, w).value, 1.0)

    def test_markov_filter_is_the_drift(self):
        model = MarkovDrift("tanh")
        w, m = sample_model_paths(model, GRID, 4, RngStream(3))
        shifted = build_u(model, 1.0, w, m)
        out = run_filter(model, 1.0, shifted.observation, QuadratureEngine())
        np.testing.assert_allclose(
            out.filtered_drift, shifted.drift.density, rtol=1e-14, atol=0
        )

    def test_raw_drift_rejected(self):
        model = PathFunctionalDrift()
        w, _ = sample_model_paths(model, GRID, 2, RngStream(0))
        with self.assertRaises(RawDriftError):
            run_filter(model, 1.0, w, QuadratureEngine())


class RevealedEngineTest(unittest.TestCase):
    def test_revealed_filter_is_the_drift(self):
        model, shifted = _channel_observation()
        out = run_filter(model, LAM, shifted.observation, RevealedEngine(shifted.m))
        np.testing.assert_allclose(out.filtered_drift, shifted.drift.density)
        residual = conditional_rho_hat(out, shifted.observation).accounting_residual
        np.testing.assert_array_less(residual, 1e-10)


class PredictabilityTest(unittest.TestCase):
    def test_future_observations_do_not_change_the_filter(self):
        cases = [
            (*_channel_observation(n_paths=6), QuadratureEngine(32), None),
            (*_channel_observation(n_paths=6), ParticleEngine(256), 17),
        ]
        markov = MarkovDrift("tanh")
        w, m = sample_model_paths(markov, GRID, 6, RngStream(9))
        cases.append((markov, build_u(markov, LAM, w, m), QuadratureEngine(), None))
        for model, shifted, engine, seed in cases:
            obs = shifted.observation
            for i in (0, 1, 20, GRID.n_steps - 1):
                increments = obs.increments.copy()
                tail = np.random.default_rng(i).standard_normal((6, GRID.n_steps - i))
                increments[:, i:] += tail
                changed = WienerPath(GRID, increments)
                with self.subTest(model=model.kind, engine=engine.tag, step=i):
                    a, b = (
                        run_filter(
                            model, LAM, path, engine,
                            None if seed is None else np.random.default_rng(seed),
                        ).filtered_drift
                        for path in (obs, changed)
                    )
                    np.testing.assert_array_equal(a[:, : i + 1], b[:, : i + 1])
                    if i + 1 < GRID.n_steps:
                        self.assertTrue(np.any(a[:, i + 1] != b[:, i + 1]))


class InnovationTest(unittest.TestCase):
    @pytest.mark.timeout(300)
    def test_channel_innovation_is_brownian(self):
        grid = TimeGrid(1024)
        model = ChannelDrift()
        w, m = sample_model_paths(model, grid, 200, RngStream(21))
        obs = build_u(model, 1.0, w, m).observation
        out = run_filter(model, 1.0, obs, QuadratureEngine(32))
        dz = innovation(out, obs).increments
        variance = float(np.mean(dz**2))
        lag1 = float(np.sum(dz[:, 1:] * dz[:, :-1]) / np.sum(dz[:, :-1] ** 2))
        self.assertLessEqual(abs(variance / grid.dt - 1.0), TOL_INNOVATION_VARIANCE)
        self.assertLessEqual(abs(lag1), TOL_INNOVATION_LAG1)

    def test_deterministic_innovation_is_the_noise(self):
        model = DeterministicDrift(profile="linear", scale=2.0)
        w, m = sample_model_paths(model, GRID, 4, RngStream(2))
        obs = build_u(model, LAM, w, m).observation
        dz = innovation(run_filter(model, LAM, obs, QuadratureEngine()), obs).increments
        np.testing.assert_allclose(dz, w.increments, atol=1e-14)

    @pytest.mark.timeout(300)
    def test_filter_error_is_orthogonal_to_the_innovation_past(self):
        grid = TimeGrid(256)
        model = ChannelDrift()
        w, m = sample_model_paths(model, grid, 4096, RngStream(31))
        shifted = build_u(model, 1.0, w, m)
        out = run_filter(model, 1.0, shifted.observation, QuadratureEngine(32))
        z = innovation(out, shifted.observation).values[:, :-1]
        error = out.filtered_drift - shifted.drift.density
        for name, g in (("tanh", np.tanh), ("cos", lambda x: np.cos(2.0 * x))):
            with self.subTest(test_function=name):
                stat = mean_estimate(np.sum(error * g(z), axis=-1) * grid.dt)
                self.assertTrue(stat.within(0.0, se_multiplier=SE_MULTIPLIER), stat)


class ParticleEngineTest(unittest.TestCase):
    def test_close_to_kalman(self):
        model, shifted = _channel_observation(n_paths=4)
        obs = shifted.observation
        out = run_filter(
            model, LAM, obs, ParticleEngine(2048), gen=np.random.default_rng(12)
        )
        expected = _kalman_mean(obs.values[:, -2], GRID.left_nodes[-1])
        np.testing.assert_allclose(out.filtered_signal[:, -1], expected, atol=0.2)
        self.assertFalse(np.any(out.collapsed))
        self.assertTrue(np.all(out.ess_min > 10.0))

    @pytest.mark.timeout(600)
    def test_agrees_with_quadrature(self):
        # 3/sqrt(N) bounds the typical path; the worst of 100 paths can exceed it.
        grid = TimeGrid(1024)
        model = ChannelDrift()
        n_particles = 512
        w, m = sample_model_paths(model, grid, 100, RngStream(41))
        obs = build_u(model, 1.0, w, m).observation
        exact = run_filter(model, 1.0, obs, QuadratureEngine(64)).filtered_drift
        approx = run_filter(
            model, 1.0, obs, ParticleEngine(n_particles), np.random.default_rng(42)
        ).filtered_drift
        gap = np.abs(approx - exact)
        bound = 3.0 / np.sqrt(n_particles)
        self.assertLessEqual(float(np.sqrt(np.mean(gap**2))), bound)
        self.assertLessEqual(float(np.median(np.max(gap, axis=-1))), bound)

    def test_reproducible(self):
        model, shifted = _channel_observation(n_paths=2)
        a = run_filter(model, LAM, shifted.observation, ParticleEngine(256), np.random.default_rng(5))
        b = run_filter(model, LAM, shifted.observation, ParticleEngine(256), np.random.default_rng(5))
        np.testing.assert_array_equal(a.filtered_signal, b.filtered_signal)

    def test_needs_generator(self):
        model, shifted = _channel_observation(n_paths=2)
        with self.assertRaises(ValueError):
            run_filter(model, LAM, shifted.observation, ParticleEngine(64))

    def test_degenerate_prior_has_one_particle(self):
        model = MarkovDrift("sin")
        w, m = sample_model_paths(model, GRID, 2, RngStream(8))
        out = run_filter(model, 1.0, build_u(model, 1.0, w, m).observation, ParticleEngine(64))
        self.assertEqual(out.particles.shape, (2, 1))

    def test_engine_validation(self):
        with self.assertRaises(ValueError):
            ParticleEngine(0)
        with self.assertRaises(ValueError):
            QuadratureEngine(0)

    def test_systematic_resample(self):
        values = np.array([[1.0, 2.0, 3.0, 4.0]])
        log_w = np.log(np.array([[1e-300, 1.0, 1e-300, 1e-300]]))
        systematic_resample(values, log_w, np.array([0]), np.random.default_rng(0))
        np.testing.assert_array_equal(values, 2.0)
        np.testing.assert_allclose(np.exp(log_w), 0.25)


class SmootherTest(unittest.TestCase):
    def test_channel_smoother_uses_terminal_value(self):
        model, shifted = _channel_observation()
        obs = shifted.observation
        out = smoother(model, LAM, obs, QuadratureEngine(64))
        expected = _kalman_mean(obs.terminal, 1.0)
        np.testing.assert_allclose(
            out.smoothed_signal, np.repeat(expected[:, None], GRID.n_steps, axis=1), rtol=1e-7, atol=1e-9
        )
        np.testing.assert_allclose(out.smoothed_drift, LAM * out.smoothed_signal)

    def test_posterior_weights_are_normalised(self):
        model, shifted = _channel_observation()
        _, log_w = posterior(model, LAM, shifted.observation, QuadratureEngine(32))
        np.testing.assert_allclose(np.sum(np.exp(log_w), axis=-1), 1.0)


class ConditionalExpectationTest(unittest.TestCase):
    def test_parameter_and_noise(self):
        model, shifted = _channel_observation()
        obs = shifted.observation
        engine = QuadratureEngine(64)
        mean_m = conditional_expectation(model, LAM, obs, lambda w, m: m, engine)
        expected = _kalman_mean(obs.terminal, 1.0)
        np.testing.assert_allclose(mean_m, expected, rtol=1e-7, atol=1e-9)
        # W(1) = U(1) - LAM m.
        mean_w = conditional_expectation(model, LAM, obs, lambda w, m: w.terminal, engine)
        np.testing.assert_allclose(mean_w, obs.terminal - LAM * expected, rtol=1e-7, atol=1e-9)

    def test_path_valued_functional(self):
        model, shifted = _channel_observation(n_paths=3)
        obs = shifted.observation
        out = conditional_expectation(
            model, LAM, obs, lambda w, m: w.values, QuadratureEngine(16)
        )
        self.assertEqual(out.shape, (3, GRID.n_steps + 1))
        np.testing.assert_allclose(out[:, 0], 0.0)


if __name__ == "__main__":
    unittest.main()
