"""Drift models u_lambda and their analytic lambda and w derivatives.

Every built-in drift factors as

    u_dot_lambda(t_i) = c(lambda) * g(t_i, x_i, m)

where `c` is the lambda-parametrization, `m` a random parameter drawn from
`RandomParameter`, and `x_i` the current value of the argument path:

    argument == "none"         g does not look at any path
    argument == "noise"        x = W, the driving noise (raw drift)
    argument == "observation"  x = U = W + u, the shifted path

The first and last cases are observation-form: the drift is a function of
(m, U-history), which is what the filters need. Raw drifts are w-functionals
only.

Forward recursions in `DriftModel.trajectory` give the drift together with its
total lambda derivatives as w-functionals. The tangent recursions give the
operators `nabla u . h`, `nabla u' . h` and `(I + nabla u)^{-1} v` in O(n) per
path without assembling matrices.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, ClassVar

import numpy as np
from numpy.polynomial import hermite_e, legendre
from scipy import stats

from .errors import DriftModelError, InsufficientHistoryError, RawDriftError
from .wiener import CameronMartinPath, TimeGrid, WienerPath

log = logging.getLogger(__name__)


def _dtanh(x):
    return 1.0 - np.tanh(x) ** 2


def _ddtanh(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t**2)


# name -> (f, f', f'')
SIGNAL_FUNCTIONS: dict[str, tuple[Callable, Callable, Callable]] = {
    "tanh": (np.tanh, _dtanh, _ddtanh),
    "sin": (np.sin, np.cos, lambda x: -np.sin(x)),
    "identity": (
        lambda x: np.asarray(x, dtype=float),
        lambda x: np.ones_like(x, dtype=float),
        lambda x: np.zeros_like(x, dtype=float),
    ),
}
BOUNDED_SIGNAL_FUNCTIONS = {"tanh", "sin"}


@dataclass(frozen=True)
class RandomParameter:
    """Law of the hidden parameter m.

    `gaussian` uses (loc, sigma) and an optional truncation at `truncate`
    standard deviations; `uniform` uses [low, high]; `point_mass` sits at loc.
    """

    law: str = "point_mass"
    loc: float = 0.0
    sigma: float = 1.0
    low: float = -1.0
    high: float = 1.0
    truncate: float | None = None

    def __post_init__(self):
        if self.law not in ("point_mass", "gaussian", "uniform"):
            raise DriftModelError(f"Unknown parameter law '{self.law}'")
        if self.law == "gaussian" and not self.sigma > 0:
            raise DriftModelError(f"Gaussian sigma must be positive, got {self.sigma}")
        if self.law == "uniform" and not self.high > self.low:
            raise DriftModelError(
                f"Uniform law needs low < high, got [{self.low}, {self.high}]"
            )
        if self.truncate is not None and not self.truncate > 0:
            raise DriftModelError(f"truncate must be positive, got {self.truncate}")

    @property
    def is_degenerate(self) -> bool:
        return self.law == "point_mass"

    @property
    def mean(self) -> float:
        if self.law == "uniform":
            return 0.5 * (self.low + self.high)
        return self.loc

    @property
    def variance(self) -> float:
        if self.law == "gaussian":
            if self.truncate is None:
                return self.sigma**2
            k = self.truncate
            return self.sigma**2 * float(stats.truncnorm(-k, k).var())
        if self.law == "uniform":
            return (self.high - self.low) ** 2 / 12.0
        return 0.0

    def sample(self, gen: np.random.Generator, shape) -> np.ndarray:
        if self.law == "gaussian":
            if self.truncate is None:
                return self.loc + self.sigma * gen.standard_normal(shape)
            k = self.truncate
            return stats.truncnorm.rvs(
                -k, k, loc=self.loc, scale=self.sigma, size=shape, random_state=gen
            )
        if self.law == "uniform":
            return gen.uniform(self.low, self.high, size=shape)
        return np.full(shape, self.loc, dtype=float)

    def quadrature(self, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns (nodes, log_weights) with weights summing to one."""
        if self.law == "point_mass":
            return np.array([self.loc]), np.array([0.0])
        if self.law == "gaussian":
            x, w = hermite_e.hermegauss(n_nodes)
            if self.truncate is not None:
                keep = np.abs(x) <= self.truncate
                x, w = x[keep], w[keep]
            nodes = self.loc + self.sigma * x
        else:
            x, w = legendre.leggauss(n_nodes)
            nodes = 0.5 * (self.low + self.high) + 0.5 * (self.high - self.low) * x
        with np.errstate(divide="ignore"):
            log_w = np.log(w / np.sum(w))
        return nodes, log_w


@dataclass(frozen=True)
class LambdaParametrization:
    """c(lambda) = lambda ** exponent. `linear` is exponent 1."""

    kind: str = "linear"
    exponent: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "power"):
            raise DriftModelError(f"Unknown parametrization '{self.kind}'")
        if self.kind == "linear" and self.exponent != 1:
            raise DriftModelError("Linear parametrization has exponent 1")
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise DriftModelError(
                f"Exponent must be a positive integer, got {self.exponent}"
            )

    def coefficient(self, lam: float, order: int = 0) -> float:
        if order not in (0, 1, 2):
            raise DriftModelError(f"Unsupported lambda derivative order {order}")
        p = int(self.exponent)
        if order > p:
            return 0.0
        return math.perm(p, order) * float(lam) ** (p - order)


@dataclass(frozen=True, eq=False)
class DriftTrajectory:
    """Drift of a batch of paths, with the quantities the tangents need.

    `x` is the argument path at left end points. `x1`/`x2` and `u1`/`u2` are
    the first and second total lambda derivatives (None when not requested).
    """

    lam: float
    grid: TimeGrid
    m: np.ndarray
    x: np.ndarray
    g: np.ndarray
    gx: np.ndarray
    gxx: np.ndarray
    u: np.ndarray
    u1: np.ndarray | None = None
    u2: np.ndarray | None = None
    x1: np.ndarray | None = None
    x2: np.ndarray | None = None


class DriftModel(ABC):
    """Abstract drift `u_dot = c(lambda) g(t, x, m)`."""

    kind: ClassVar[str]
    argument: ClassVar[str]

    def __init__(
        self,
        parametrization: LambdaParametrization | None = None,
        parameter: RandomParameter | None = None,
    ):
        self.parametrization = parametrization or LambdaParametrization()
        self.parameter = parameter or RandomParameter()

    @abstractmethod
    def signal(self, t, x, m) -> np.ndarray:
        """g(t, x, m), broadcasting over x and m."""
        pass

    def signal_dx(self, t, x, m) -> np.ndarray:
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(m)))

    def signal_dxx(self, t, x, m) -> np.ndarray:
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(m)))

    @property
    def observation_form(self) -> bool:
        return self.argument != "noise"

    @property
    def novikov_bounded(self) -> bool:
        """True when the drift is bounded, so E[rho(-delta u)] = 1 is guaranteed."""
        return True

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "parametrization": self.parametrization.kind,
            "exponent": self.parametrization.exponent,
            "parameter_law": self.parameter.law,
        }

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"

    def c(self, lam: float, order: int = 0) -> float:
        return self.parametrization.coefficient(lam, order)

    def default_parameter(self, batch_shape) -> np.ndarray:
        if not self.parameter.is_degenerate:
            raise DriftModelError(
                f"Model '{self.kind}' has a random parameter; m must be given"
            )
        return np.full(batch_shape, self.parameter.loc, dtype=float)

    def trajectory(
        self, lam: float, w: WienerPath, m=None, order: int = 0
    ) -> DriftTrajectory:
        """Runs the forward recursion for the drift and its lambda derivatives."""
        if order not in (0, 1, 2):
            raise DriftModelError(f"Unsupported lambda derivative order {order}")
        grid = w.grid
        batch = w.batch_shape
        m = self.default_parameter(batch) if m is None else np.asarray(m, dtype=float)
        mm = m[..., None]
        t = grid.left_nodes
        c0, c1, c2 = (self.c(lam, k) for k in range(3))

        if self.argument != "observation":
            if self.argument == "noise":
                x = w.values[..., :-1]
            else:
                x = np.zeros(batch + (grid.n_steps,))
            g = np.broadcast_to(self.signal(t, x, mm), np.broadcast_shapes(x.shape, mm.shape))
            gx = self.signal_dx(t, x, mm)
            gxx = self.signal_dxx(t, x, mm)
            zeros = np.zeros_like(g)
            traj = DriftTrajectory(
                lam=lam, grid=grid, m=m, x=x, g=g, gx=gx, gxx=gxx, u=c0 * g,
                u1=c1 * g if order >= 1 else None,
                u2=c2 * g if order >= 2 else None,
                x1=zeros if order >= 1 else None,
                x2=zeros if order >= 2 else None,
            )
        else:
            traj = self._observation_recursion(lam, w, m, order)
        _check_finite(traj.u, self.kind)
        return traj

    def _observation_recursion(self, lam, w, m, order) -> DriftTrajectory:
        grid = w.grid
        dt = grid.dt
        n = grid.n_steps
        shape = np.broadcast_shapes(w.batch_shape, np.shape(m)) + (n,)
        c0, c1, c2 = (self.c(lam, k) for k in range(3))
        x, g, gx, gxx, u = (np.empty(shape) for _ in range(5))
        u1, x1 = (np.empty(shape), np.empty(shape)) if order >= 1 else (None, None)
        u2, x2 = (np.empty(shape), np.empty(shape)) if order >= 2 else (None, None)
        # x = U, x1 = dU/dlambda, x2 = d2U/dlambda2, all at t_i.
        cur = np.zeros(shape[:-1])
        cur1 = np.zeros(shape[:-1])
        cur2 = np.zeros(shape[:-1])
        for i in range(n):
            t = i * dt
            x[..., i] = cur
            g[..., i] = self.signal(t, cur, m)
            gx[..., i] = self.signal_dx(t, cur, m)
            gxx[..., i] = self.signal_dxx(t, cur, m)
            u[..., i] = c0 * g[..., i]
            if order >= 1:
                x1[..., i] = cur1
                u1[..., i] = c1 * g[..., i] + c0 * gx[..., i] * cur1
            if order >= 2:
                x2[..., i] = cur2
                u2[..., i] = (
                    c2 * g[..., i]
                    + 2.0 * c1 * gx[..., i] * cur1
                    + c0 * gxx[..., i] * cur1**2
                    + c0 * gx[..., i] * cur2
                )
                cur2 = cur2 + u2[..., i] * dt
            if order >= 1:
                cur1 = cur1 + u1[..., i] * dt
            # Same summation order as the cumsum behind WienerPath.values.
            cur = cur + (w.increments[..., i] + u[..., i] * dt)
        return DriftTrajectory(
            lam=lam, grid=grid, m=np.asarray(m), x=x, g=g, gx=gx, gxx=gxx, u=u,
            u1=u1, u2=u2, x1=x1, x2=x2,
        )

    # Tangent operators. `h` is a density array broadcasting against traj.u.

    def apply_gradient(self, traj: DriftTrajectory, h: np.ndarray) -> np.ndarray:
        """(nabla u . h)(t_i) = sum_j M[i][j] h_dot(t_j)."""
        dt = traj.grid.dt
        c0 = self.c(traj.lam)
        if self.argument == "none":
            return np.zeros(np.broadcast_shapes(traj.u.shape, np.shape(h)))
        if self.argument == "noise":
            return c0 * traj.gx * _exclusive_cumsum(h) * dt
        out_shape = np.broadcast_shapes(traj.u.shape, np.shape(h))
        out = np.empty(out_shape)
        h = np.broadcast_to(h, out_shape)
        y = np.zeros(out_shape[:-1])
        for i in range(traj.grid.n_steps):
            out[..., i] = c0 * traj.gx[..., i] * y
            y = y + (out[..., i] + h[..., i]) * dt
        return out

    def apply_derivative_gradient(
        self, traj: DriftTrajectory, h: np.ndarray
    ) -> np.ndarray:
        """nabla u' . h, the w-gradient of the first lambda derivative."""
        if traj.u1 is None:
            raise DriftModelError("Trajectory was built without lambda derivatives")
        dt = traj.grid.dt
        c0, c1 = self.c(traj.lam), self.c(traj.lam, 1)
        if self.argument == "none":
            return np.zeros(np.broadcast_shapes(traj.u.shape, np.shape(h)))
        if self.argument == "noise":
            return c1 * traj.gx * _exclusive_cumsum(h) * dt
        out_shape = np.broadcast_shapes(traj.u.shape, np.shape(h))
        out = np.empty(out_shape)
        h = np.broadcast_to(h, out_shape)
        y = np.zeros(out_shape[:-1])
        y1 = np.zeros(out_shape[:-1])
        for i in range(traj.grid.n_steps):
            gx, gxx = traj.gx[..., i], traj.gxx[..., i]
            out[..., i] = c1 * gx * y + c0 * gxx * y * traj.x1[..., i] + c0 * gx * y1
            grad_u = c0 * gx * y
            y = y + (grad_u + h[..., i]) * dt
            y1 = y1 + out[..., i] * dt
        return out

    def solve_resolvent(self, traj: DriftTrajectory, v: np.ndarray) -> np.ndarray:
        """(I + nabla u)^{-1} v by forward substitution along the tangent."""
        dt = traj.grid.dt
        c0 = self.c(traj.lam)
        if self.argument == "none":
            return np.array(np.broadcast_to(v, np.broadcast_shapes(traj.u.shape, np.shape(v))))
        if self.argument == "observation":
            # The tangent of U along the solution only sees v.
            return v - c0 * traj.gx * _exclusive_cumsum(v) * dt
        out_shape = np.broadcast_shapes(traj.u.shape, np.shape(v))
        out = np.empty(out_shape)
        v = np.broadcast_to(v, out_shape)
        y = np.zeros(out_shape[:-1])
        for i in range(traj.grid.n_steps):
            out[..., i] = v[..., i] - c0 * traj.gx[..., i] * y
            y = y + out[..., i] * dt
        return out

    def log_density(self, lam: float, obs: WienerPath) -> np.ndarray | None:
        """log dP_U/dmu at obs, when available in closed form."""
        if not (self.observation_form and self.parameter.is_degenerate):
            return None
        m = self.default_parameter(obs.batch_shape)
        t = obs.grid.left_nodes
        drift = self.c(lam) * np.broadcast_to(
            self.signal(t, obs.values[..., :-1], m[..., None]), obs.increments.shape
        )
        return np.sum(drift * obs.increments, axis=-1) - 0.5 * np.sum(
            drift**2, axis=-1
        ) * obs.grid.dt


def _exclusive_cumsum(a: np.ndarray) -> np.ndarray:
    """out_i = sum_{k<i} a_k."""
    a = np.asarray(a, dtype=float)
    out = np.cumsum(a, axis=-1)
    out[..., 1:] = out[..., :-1]
    out[..., 0] = 0.0
    return out


def _check_finite(u: np.ndarray, kind: str):
    if not np.all(np.isfinite(u)):
        bad = np.argwhere(~np.isfinite(u))[0]
        raise DriftModelError(f"Drift '{kind}' produced a non-finite value at {tuple(bad)}")


class ZeroDrift(DriftModel):
    kind = "zero"
    argument = "none"

    def signal(self, t, x, m):
        return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(m)))


DETERMINISTIC_PROFILES = {
    "constant": lambda t: np.ones_like(t, dtype=float),
    "linear": lambda t: np.asarray(t, dtype=float),
    "cosine": lambda t: np.cos(2.0 * np.pi * np.asarray(t, dtype=float)),
}


class DeterministicDrift(DriftModel):
    """u_dot = c(lambda) * scale * profile(t)."""

    kind = "deterministic"
    argument = "none"

    def __init__(self, profile: str = "constant", scale: float = 1.0, **kwargs):
        super().__init__(**kwargs)
        if profile not in DETERMINISTIC_PROFILES:
            raise DriftModelError(f"Unknown deterministic profile '{profile}'")
        self.profile = profile
        self.scale = float(scale)

    def signal(self, t, x, m):
        h = self.scale * DETERMINISTIC_PROFILES[self.profile](t)
        return h * np.ones(np.broadcast_shapes(np.shape(x), np.shape(m)))

    def describe(self) -> dict:
        return super().describe() | {"profile": self.profile, "scale": self.scale}


class ChannelDrift(DriftModel):
    """u_dot = c(lambda) * m with m drawn once per path."""

    kind = "gauss_channel"
    argument = "none"

    def __init__(self, parameter: RandomParameter | None = None, **kwargs):
        super().__init__(
            parameter=parameter or RandomParameter(law="gaussian", sigma=1.0), **kwargs
        )

    def signal(self, t, x, m):
        shape = np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(m))
        return np.broadcast_to(np.asarray(m, dtype=float), shape)

    @property
    def novikov_bounded(self) -> bool:
        return self.parameter.law != "gaussian" or self.parameter.truncate is not None

    def log_density(self, lam: float, obs: WienerPath) -> np.ndarray | None:
        law = self.parameter
        if law.law == "gaussian" and law.truncate is None:
            # int exp(a m - b m^2 / 2) N(loc, sigma^2)(dm), a = c U(1), b = c^2.
            a = self.c(lam) * obs.terminal
            b = self.c(lam) ** 2
            var = law.sigma**2
            precision = 1.0 / var + b
            linear = law.loc / var + a
            return (
                -0.5 * np.log(var * precision)
                + linear**2 / (2.0 * precision)
                - law.loc**2 / (2.0 * var)
            )
        return super().log_density(lam, obs)

    def describe(self) -> dict:
        return super().describe() | {"sigma": self.parameter.sigma}


class MarkovDrift(DriftModel):
    """u_dot(t) = c(lambda) f(U(t)), observation-form."""

    kind = "markov"
    argument = "observation"

    def __init__(self, function: str = "tanh", **kwargs):
        super().__init__(**kwargs)
        if function not in SIGNAL_FUNCTIONS:
            raise DriftModelError(f"Unknown signal function '{function}'")
        self.function = function
        self._f, self._df, self._ddf = SIGNAL_FUNCTIONS[function]

    def signal(self, t, x, m):
        return self._f(x) * np.ones(np.shape(m))

    def signal_dx(self, t, x, m):
        return self._df(x) * np.ones(np.shape(m))

    def signal_dxx(self, t, x, m):
        return self._ddf(x) * np.ones(np.shape(m))

    @property
    def novikov_bounded(self) -> bool:
        return self.function in BOUNDED_SIGNAL_FUNCTIONS

    def describe(self) -> dict:
        return super().describe() | {"function": self.function}


class PathFunctionalDrift(MarkovDrift):
    """u_dot(t) = c(lambda) g(W(t)), a raw drift of the noise path."""

    kind = "path_functional"
    argument = "noise"

    def __init__(self, function: str = "identity", **kwargs):
        super().__init__(function=function, **kwargs)


MODEL_KINDS: dict[str, type[DriftModel]] = {
    cls.kind: cls
    for cls in (ZeroDrift, DeterministicDrift, ChannelDrift, MarkovDrift, PathFunctionalDrift)
}


# Module-level operations.


def _history_value(step: int, history: np.ndarray) -> np.ndarray:
    history = np.asarray(history, dtype=float)
    if step < 0 or history.shape[-1] < step + 1:
        raise InsufficientHistoryError(
            f"Drift at step {step} needs {step + 1} history values, "
            f"got {history.shape[-1]}"
        )
    return history[..., step]


def eval_drift(
    model: DriftModel, lam: float, step: int, history: np.ndarray, m=0.0, dt: float = 0.0
) -> np.ndarray:
    """u_dot_lambda(t_step) from the argument-path values t_0 .. t_step.

    `dt` is only needed for time-dependent signals (t_step = step * dt).
    """
    x = _history_value(step, history)
    return model.c(lam) * model.signal(step * dt, x, m)


def drift_lambda_derivative(
    model: DriftModel,
    lam: float,
    order: int,
    step: int,
    history: np.ndarray,
    m=0.0,
    dt: float = 0.0,
) -> np.ndarray:
    """d^order/dlambda^order of eval_drift with the history held fixed."""
    x = _history_value(step, history)
    return model.c(lam, order) * model.signal(step * dt, x, m)


@dataclass(frozen=True, eq=False)
class ShiftedPath:
    noise: WienerPath
    drift: CameronMartinPath
    observation: WienerPath
    m: np.ndarray
    trajectory: DriftTrajectory = field(repr=False)


def build_u(model: DriftModel, lam: float, w: WienerPath, m=None, order: int = 0) -> ShiftedPath:
    """Builds u_lambda(w) and the shifted path U = w + u."""
    traj = model.trajectory(lam, w, m, order=order)
    drift = CameronMartinPath(w.grid, traj.u)
    increments = w.increments + traj.u * w.grid.dt
    return ShiftedPath(
        noise=w,
        drift=drift,
        observation=WienerPath(w.grid, increments),
        m=traj.m,
        trajectory=traj,
    )


def build_u_derivatives(
    model: DriftModel, lam: float, w: WienerPath, m=None
) -> tuple[CameronMartinPath, CameronMartinPath]:
    """Total lambda derivatives (u', u'') as w-functionals."""
    traj = model.trajectory(lam, w, m, order=2)
    return CameronMartinPath(w.grid, traj.u1), CameronMartinPath(w.grid, traj.u2)


def recover_noise(model: DriftModel, lam: float, obs: WienerPath, m) -> WienerPath:
    """w = U - u(U, m) for observation-form drifts."""
    if not model.observation_form:
        raise RawDriftError(f"Model '{model.kind}' is not observation-form")
    m = np.asarray(m, dtype=float)
    drift = model.c(lam) * model.signal(
        obs.grid.left_nodes, obs.values[..., :-1], m[..., None]
    )
    return WienerPath(obs.grid, obs.increments - drift * obs.grid.dt)
