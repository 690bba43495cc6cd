"""Internal dense linear-algebra helpers built on LAPACK via numpy/scipy."""

import numpy as np
from scipy.linalg import solve_triangular
from threadpoolctl import ThreadpoolController

from .errors import NotPositiveDefiniteError

# inputs with lambda_min below this fraction of lambda_max are rejected rather
# than regularized silently
NEAR_SINGULAR_RATIO = 1e-10

_THREADPOOLS = ThreadpoolController()


def single_threaded_blas():
    """Context manager pinning BLAS to one thread.

    Loops over many small matrices are dominated by thread-pool
    synchronization otherwise; factor-level parallelism brings nothing at
    the dimensions this package targets.
    """
    return _THREADPOOLS.limit(limits=1)


def cholesky(m, what="matrix"):
    """Lower Cholesky factor, raising NotPositiveDefiniteError on failure."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from err


def spd_inverse(m, what="matrix"):
    """Inverse of a symmetric positive definite matrix, symmetrized."""
    lower = cholesky(m, what)
    inv_lower = solve_triangular(lower, np.eye(m.shape[0]), lower=True, check_finite=False)
    out = inv_lower.T @ inv_lower
    return 0.5 * (out + out.T)


def spd_solve(m, rhs, what="matrix"):
    """Solve ``m @ x = rhs`` for symmetric positive definite ``m``."""
    lower = cholesky(m, what)
    y = solve_triangular(lower, rhs, lower=True, check_finite=False)
    return solve_triangular(lower.T, y, lower=False, check_finite=False)


def reject_near_singular(m, what="matrix"):
    """Raise if the matrix is not numerically positive definite.

    Callers that want a regularized input must apply an explicit ridge
    first; nothing is added silently here.
    """
    eigenvalues = np.linalg.eigvalsh(m)
    if eigenvalues[0] <= NEAR_SINGULAR_RATIO * max(eigenvalues[-1], 0.0):
        raise NotPositiveDefiniteError(
            f"{what} is numerically singular "
            f"(lambda_min={eigenvalues[0]:.3e}, lambda_max={eigenvalues[-1]:.3e})"
        )
