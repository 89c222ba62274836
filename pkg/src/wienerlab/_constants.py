"""Numerical constants shared by every module.

The Jacobian normalisation is fixed here and nowhere else:

    M[i][j] = dt * d u_dot(t_i) / d dW_j

so that `(nabla u . h)(t_i) = sum_j M[i][j] * h_dot(t_j)` for a Cameron-Martin
direction `h`. On a uniform grid the H-operator is the matrix itself, hence the
Hilbert-Schmidt norm is the Frobenius norm and the operator norm is the matrix
2-norm.
"""

# Paths are simulated and reduced in blocks of this size. Block `b` always draws
# from substream `b`, which makes results independent of the thread count.
PATH_BLOCK_SIZE = 64

# Jackknife block size (in paths).
JACKKNIFE_BLOCK_SIZE = 64

# Central finite-difference step for Jacobians: eps = FD_JACOBIAN_SCALE * sqrt(dt).
FD_JACOBIAN_SCALE = 1e-5

# Directional derivative step, in units of the H-norm of the direction.
FD_DIRECTIONAL_STEP = 1e-5

# Lambda finite-difference steps.
FD_LAMBDA_STEP_FIRST = 1.0 / 16.0
FD_LAMBDA_STEP_SECOND = 1.0 / 8.0
# Step for lambda derivatives of fields at fixed (w, m).
FD_LAMBDA_STEP_FIELD = 1e-4

# Trapezoid step of the lambda integral in the density representation.
DENSITY_LAMBDA_STEP = 1.0 / 64.0

# Power iteration.
POWER_ITERATION_MAX = 500
POWER_ITERATION_RTOL = 1e-10

# Filters.
RESAMPLE_ESS_FRACTION = 0.5
COLLAPSE_ESS = 10.0

# Default tolerances of the verification suite.
TOL_DIVERGENCE_ITO = 1e-8
TOL_RESOLVENT_RESIDUAL = 1e-10
TOL_ACCOUNTING = 1e-6
TOL_CONJUGATE_IDENTITY = 2e-2
TOL_ENTROPY_AGREEMENT = 2e-2
TOL_DENSITY_DETERMINISTIC = 1e-3
TOL_DENSITY_GAUSS = 1e-2
TOL_INNOVATION_VARIANCE = 0.05
TOL_INNOVATION_LAG1 = 0.05
TOL_DERIVATIVE_FIRST = 0.05
TOL_DERIVATIVE_SECOND = 0.10
TOL_ORACLE_RELATIVE = 0.03
# Grid inversion replays the forward left-point drift, so it is exact up to rounding.
TOL_ROUNDTRIP = 1e-10
SE_MULTIPLIER = 3.0

# Log-domain guard: exp() overflows double precision above this.
LOG_OVERFLOW = 709.0

# An inverse path growing beyond this is reported as not converged.
INVERSE_BLOWUP = 1e6
