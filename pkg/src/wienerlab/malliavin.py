"""Discrete Malliavin calculus: gradient matrices, divergence, resolvent.

All matrices follow the normalisation documented in `_constants`. Adapted
drifts give strictly lower triangular matrices; the resolvent is then a
forward substitution and the divergence of an adapted field reduces to its Ito
sum.
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import linalg

from ._constants import (
    FD_JACOBIAN_SCALE,
    POWER_ITERATION_MAX,
    POWER_ITERATION_RTOL,
)
from .drifts import DriftModel
from .errors import DriftModelError, SingularOperatorError
from .wiener import CameronMartinPath, TimeGrid, WienerPath, ito_integral

log = logging.getLogger(__name__)

GRADIENT_FIELDS = ("drift", "first_derivative")
GRADIENT_MODES = ("analytic", "finite_difference")


@dataclass(frozen=True, eq=False)
class JacobianMatrix:
    """M[..., i, j] = dt * d field(t_i) / d dW_j."""

    grid: TimeGrid
    matrix: np.ndarray

    @property
    def hs_norm_sq(self) -> np.ndarray:
        return np.sum(self.matrix**2, axis=(-2, -1))

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.matrix, axis1=-2, axis2=-1)

    def is_strictly_lower(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(np.triu(self.matrix)) <= atol))

    def apply(self, h: np.ndarray) -> np.ndarray:
        """(M . h)(t_i) = sum_j M[i][j] h_dot(t_j)."""
        return np.einsum("...ij,...j->...i", self.matrix, h)


def _as_density(field) -> np.ndarray:
    if isinstance(field, CameronMartinPath):
        return field.density
    return np.asarray(field, dtype=float)


def gradient_matrix(
    model: DriftModel,
    lam: float,
    w: WienerPath,
    m=None,
    mode: str = "analytic",
    field: str = "drift",
) -> JacobianMatrix:
    """Jacobian of u_lambda (or of u'_lambda) with respect to the increments.

    `analytic` pushes the basis directions through the model's tangent
    recursion; `finite_difference` uses central differences with step
    FD_JACOBIAN_SCALE * sqrt(dt).
    """
    if mode not in GRADIENT_MODES:
        raise ValueError(f"Unknown gradient mode '{mode}'")
    if field not in GRADIENT_FIELDS:
        raise ValueError(f"Unknown gradient field '{field}'")
    n = w.grid.n_steps
    m = model.default_parameter(w.batch_shape) if m is None else np.asarray(m, dtype=float)
    # Axis -2 enumerates the direction (perturbed increment j).
    expanded_m = np.broadcast_to(m, w.batch_shape)[..., None]
    order = 0 if field == "drift" else 1

    if mode == "analytic":
        expanded = WienerPath(w.grid, w.increments[..., None, :])
        traj = model.trajectory(lam, expanded, expanded_m, order=order)
        basis = np.eye(n)
        if field == "drift":
            columns = model.apply_gradient(traj, basis)
        else:
            columns = model.apply_derivative_gradient(traj, basis)
    else:
        eps = FD_JACOBIAN_SCALE * np.sqrt(w.grid.dt)
        bump = eps * np.eye(n)
        plus = model.trajectory(
            lam, WienerPath(w.grid, w.increments[..., None, :] + bump), expanded_m, order=order
        )
        minus = model.trajectory(
            lam, WienerPath(w.grid, w.increments[..., None, :] - bump), expanded_m, order=order
        )
        if field == "drift":
            diff = plus.u - minus.u
        else:
            diff = plus.u1 - minus.u1
        columns = diff / (2.0 * eps) * w.grid.dt
    return JacobianMatrix(w.grid, np.swapaxes(columns, -1, -2))


def divergence(
    field, path: WienerPath, jacobian: JacobianMatrix | None = None
) -> np.ndarray:
    """Skorohod integral delta(v) = sum_i v_dot(t_i) dW_i - trace(M_v).

    Passing `jacobian=None` declares the field adapted, in which case the
    trace correction vanishes and this is the Ito sum.
    """
    v = _as_density(field)
    ito = ito_integral(v, path)
    if jacobian is None:
        return ito
    if jacobian.matrix.shape[-1] != path.grid.n_steps:
        raise DriftModelError("Jacobian does not match the path grid")
    return ito - np.sum(jacobian.diagonal, axis=-1)


def _identity_plus(matrix: np.ndarray) -> np.ndarray:
    return matrix + np.eye(matrix.shape[-1])


def resolvent_apply(jacobian: JacobianMatrix, v) -> np.ndarray:
    """Solves (I + M) x = v.

    Strictly lower triangular M (adapted drifts) is solved by forward
    substitution; anything else falls back to an LU solve, raising
    SingularOperatorError when I + M is singular.
    """
    v = _as_density(v)
    matrix = jacobian.matrix
    batch = np.broadcast_shapes(matrix.shape[:-2], v.shape[:-1])
    matrix = np.broadcast_to(matrix, batch + matrix.shape[-2:])
    v = np.broadcast_to(v, batch + v.shape[-1:])
    out = np.empty(batch + v.shape[-1:])
    for idx in np.ndindex(*batch):
        a = matrix[idx]
        if not np.any(np.triu(a)):
            out[idx] = linalg.solve_triangular(a, v[idx], lower=True, unit_diagonal=True)
            continue
        try:
            out[idx] = linalg.solve(_identity_plus(a), v[idx])
        except linalg.LinAlgError as e:
            raise SingularOperatorError(f"I + M is singular at batch index {idx}") from e
    return out


def resolvent_residual(jacobian: JacobianMatrix, v, x: np.ndarray) -> np.ndarray:
    """max_i |((I + M) x - v)_i|."""
    v = _as_density(v)
    return np.max(np.abs(x + jacobian.apply(x) - v), axis=-1)


def quasi_nilpotency_defect(jacobian: JacobianMatrix) -> np.ndarray:
    """max |M[i][j]| over j >= i; zero exactly for adapted drifts."""
    return np.max(np.abs(np.triu(jacobian.matrix)), axis=(-2, -1))


@dataclass(frozen=True)
class CarlemanReport:
    op_norm: float
    bound: float
    satisfied: bool
    iterations: int
    converged: bool


def _resolvent_op_norm(a: np.ndarray) -> tuple[float, int, bool]:
    """Largest singular value of (I + a)^{-1} by power iteration on K^T K."""
    n = a.shape[-1]
    lower = not np.any(np.triu(a))
    if lower:
        solve = lambda y, trans: linalg.solve_triangular(  # noqa: E731
            a, y, lower=True, unit_diagonal=True, trans=trans
        )
    else:
        try:
            lu = linalg.lu_factor(_identity_plus(a), check_finite=True)
        except (linalg.LinAlgError, ValueError) as e:
            raise SingularOperatorError("I + M is singular") from e
        if np.any(np.diag(lu[0]) == 0.0):
            raise SingularOperatorError("I + M is singular")
        solve = lambda y, trans: linalg.lu_solve(lu, y, trans=trans)  # noqa: E731

    x = np.ones(n) / np.sqrt(n)
    sigma = 0.0
    for iteration in range(1, POWER_ITERATION_MAX + 1):
        kx = solve(x, 0)
        y = solve(kx, 1)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, iteration, True
        new_sigma = float(np.sqrt(np.dot(x, y)))
        x = y / norm
        if abs(new_sigma - sigma) <= POWER_ITERATION_RTOL * new_sigma:
            return new_sigma, iteration, True
        sigma = new_sigma
    return sigma, POWER_ITERATION_MAX, False


def carleman_check(jacobian: JacobianMatrix) -> list[CarlemanReport]:
    """Checks |(I + M)^{-1}| <= exp((|M|_HS^2 + 1) / 2) for every path."""
    matrix = jacobian.matrix
    flat = matrix.reshape((-1,) + matrix.shape[-2:])
    reports = []
    for a in flat:
        op_norm, iterations, converged = _resolvent_op_norm(a)
        if not converged:
            log.warning(
                f"Power iteration did not converge in {POWER_ITERATION_MAX} iterations"
            )
        bound = float(np.exp(0.5 * (np.sum(a**2) + 1.0)))
        reports.append(
            CarlemanReport(
                op_norm=op_norm,
                bound=bound,
                satisfied=op_norm <= bound * (1.0 + 1e-9),
                iterations=iterations,
                converged=converged,
            )
        )
    return reports
