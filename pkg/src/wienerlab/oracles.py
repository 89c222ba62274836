"""Closed-form reference values for the models that have them.

Oracles are evaluated at run time from the model parameters, so a scenario
with a different sigma or parametrization is checked against its own values.
Quantity names are the ones used in report rows.

Gaussian channel (u_dot = c(lambda) m, m ~ N(0, sigma^2)), with s = c^2 sigma^2:

    I        = 1/2 log(1 + s)
    theta    = 1/2 s - I             theta_joint = 1/2 s
    mmse     = log(1 + s)            nce         = s / (1 + s)
    beta     = c^4 sigma^4 / (1 + s)

The "_signal" variants divide the drift errors by c^2 and tend to the prior
variance at lambda = 0.
"""

import math
from typing import Callable

import numpy as np

from .drifts import ChannelDrift, DeterministicDrift, DriftModel, ZeroDrift
from .wiener import TimeGrid


class Oracle:
    """No closed forms: every lookup returns None."""

    def __init__(self, model: DriftModel):
        self.model = model
        self._table: dict[str, Callable[[float], float]] = {}

    def value(self, quantity: str, lam: float) -> float | None:
        fn = self._table.get(quantity)
        return None if fn is None else float(fn(float(lam)))

    @property
    def quantities(self) -> list[str]:
        return sorted(self._table)

    def _coefficients(self, lam: float) -> tuple[float, float, float]:
        return tuple(self.model.c(lam, k) for k in range(3))


class ZeroOracle(Oracle):
    def __init__(self, model: DriftModel):
        super().__init__(model)
        for name in (
            "theta", "theta_rho", "theta_joint", "mutual_information", "duncan",
            "causal_mmse", "nce", "dtheta", "d2theta", "dtau", "d2tau", "dI",
            "d2I", "gap", "beta", "dbeta", "log_density",
        ):
            self._table[name] = lambda lam: 0.0
        self._table["novikov"] = lambda lam: 1.0


class DeterministicOracle(Oracle):
    """u = c(lambda) h with |h|_H^2 taken on the grid."""

    def __init__(self, model: DeterministicDrift, grid: TimeGrid):
        super().__init__(model)
        h = model.signal(grid.left_nodes, np.zeros(grid.n_steps), 0.0)
        self.h_norm_sq = float(np.sum(h**2) * grid.dt)
        energy = lambda lam: 0.5 * model.c(lam) ** 2 * self.h_norm_sq
        self._table.update(
            {
                "theta": energy,
                "theta_rho": energy,
                "theta_joint": energy,
                "mutual_information": lambda lam: 0.0,
                "duncan": lambda lam: 0.0,
                "causal_mmse": lambda lam: 0.0,
                "nce": lambda lam: 0.0,
                "gap": lambda lam: 0.0,
                "novikov": lambda lam: 1.0,
                "dtheta": self._first,
                "dtau": self._first,
                "d2theta": self._second,
                "d2tau": self._second,
                "dI": lambda lam: 0.0,
                "d2I": lambda lam: 0.0,
                "beta": lambda lam: model.c(lam) ** 2 * self.h_norm_sq,
                "dbeta": lambda lam: 2.0 * self._first(lam),
            }
        )

    def _first(self, lam):
        c0, c1, _ = self._coefficients(lam)
        return c0 * c1 * self.h_norm_sq

    def _second(self, lam):
        c0, c1, c2 = self._coefficients(lam)
        return (c1**2 + c0 * c2) * self.h_norm_sq


class GaussianChannelOracle(Oracle):
    def __init__(self, model: ChannelDrift):
        super().__init__(model)
        self.var = model.parameter.sigma**2
        self._table.update(
            {
                "theta": self.theta,
                "theta_rho": self.theta,
                "theta_joint": lambda lam: 0.5 * self._snr(lam),
                "mutual_information": self.information,
                "duncan": self.information,
                "gap": self.information,
                "causal_mmse": lambda lam: math.log1p(self._snr(lam)),
                "causal_mmse_signal": self.mmse_signal,
                "nce": lambda lam: self._snr(lam) / (1.0 + self._snr(lam)),
                "nce_signal": lambda lam: self.var / (1.0 + self._snr(lam)),
                "dtheta": self.dtheta,
                "dtau": self.dtheta,
                "d2theta": self.d2theta,
                "d2tau": self.d2theta,
                "dI": self.dinformation,
                "d2I": self.d2information,
                "beta": self.beta,
                "dbeta": self.dbeta,
                "novikov": lambda lam: 1.0,
            }
        )

    def _snr(self, lam):
        return self.model.c(lam) ** 2 * self.var

    def information(self, lam):
        return 0.5 * math.log1p(self._snr(lam))

    def theta(self, lam):
        return 0.5 * self._snr(lam) - self.information(lam)

    def mmse_signal(self, lam):
        c = self.model.c(lam)
        s = self._snr(lam)
        return self.var if c == 0.0 else math.log1p(s) / c**2

    def dtheta(self, lam):
        c0, c1, _ = self._coefficients(lam)
        s = c0**2 * self.var
        return c1 * c0**3 * self.var**2 / (1.0 + s)

    def d2theta(self, lam):
        c0, c1, c2 = self._coefficients(lam)
        v = self.var
        s = c0**2 * v
        f = c0**3 * v**2 / (1.0 + s)
        df = v**2 * c0**2 * (3.0 + s) / (1.0 + s) ** 2
        return c2 * f + c1**2 * df

    def dinformation(self, lam):
        c0, c1, _ = self._coefficients(lam)
        return c1 * c0 * self.var / (1.0 + c0**2 * self.var)

    def d2information(self, lam):
        c0, c1, c2 = self._coefficients(lam)
        v = self.var
        s = c0**2 * v
        return c2 * c0 * v / (1.0 + s) + c1**2 * v * (1.0 - s) / (1.0 + s) ** 2

    def beta(self, lam):
        c = self.model.c(lam)
        return c**4 * self.var**2 / (1.0 + self._snr(lam))

    def dbeta(self, lam):
        c0, c1, _ = self._coefficients(lam)
        s = c0**2 * self.var
        return c1 * self.var**2 * c0**3 * (4.0 + 2.0 * s) / (1.0 + s) ** 2


def oracle_for(model: DriftModel, grid: TimeGrid) -> Oracle:
    if isinstance(model, ZeroDrift):
        return ZeroOracle(model)
    if isinstance(model, DeterministicDrift):
        return DeterministicOracle(model, grid)
    law = model.parameter
    if (
        isinstance(model, ChannelDrift)
        and law.law == "gaussian"
        and law.truncate is None
        and law.loc == 0.0
    ):
        return GaussianChannelOracle(model)
    return Oracle(model)
