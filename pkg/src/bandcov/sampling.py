"""Seeded random generation and the matrix-variate densities behind it.

Multivariate normal data, Wishart and inverse-Wishart draws via the Bartlett
construction, the normalized inverse-Wishart log density, and the Gaussian
row log likelihood used throughout cross-validation.

Inverse-Wishart degrees of freedom follow the determinant-exponent
convention: parameters ``(scale, df)`` mean a density proportional to
``|sigma|^(-df/2) exp(-tr(sigma^{-1} scale) / 2)``, which requires
``df > 2p``.  The bridge to the conventional Wishart parameterization
(``df_std = df - p - 1``) is internal to this module.

All samplers are pure functions of ``(params, seed)``.  Streams are
counter-based (Philox keyed off a hashed ``(root_seed, stream_index)``
pair), so distinct stream indices are independent and reproducible
regardless of execution order or thread count.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded, solve_triangular
from scipy.special import gammaln

from ._linalg import cholesky, single_threaded_blas, spd_inverse
from .bandmat import as_symmetric
from .errors import NotPositiveDefiniteError, NumericError

__all__ = [
    "SeedSpec",
    "IWParams",
    "sample_mvn",
    "sample_wishart",
    "sample_inverse_wishart",
    "iw_log_density",
    "log_multivariate_gamma",
    "gaussian_log_likelihood",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class SeedSpec:
    """Root seed plus substream index for counter-based generation.

    The same (root_seed, stream_index) pair reproduces draws bit for bit;
    distinct stream indices give statistically independent substreams.
    """

    root_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < 2**64:
            raise ValueError(f"root_seed must be an unsigned 64-bit integer, got {self.root_seed}")
        if int(self.stream_index) < 0:
            raise ValueError(f"stream_index must be nonnegative, got {self.stream_index}")

    def generator(self):
        """Fresh Generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence((int(self.root_seed), int(self.stream_index)))
        return np.random.Generator(np.random.Philox(sequence))

    def stream(self, index):
        """SeedSpec for substream ``index`` under the same root seed."""
        return SeedSpec(self.root_seed, int(index))


@dataclass(frozen=True)
class IWParams:
    """Inverse-Wishart parameters in the determinant-exponent convention.

    ``scale`` must be positive definite and ``df > 2p``.  The mean exists
    only for ``df > 2p + 2`` and equals ``scale / (df - 2p - 2)``.
    """

    scale: np.ndarray
    df: float
    chol_scale: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        scale = as_symmetric(self.scale, "scale")
        p = scale.shape[0]
        if not self.df > 2 * p:
            raise ValueError(f"df must exceed 2p = {2 * p}, got {self.df}")
        lower = cholesky(scale, "scale")
        scale.setflags(write=False)
        lower.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "chol_scale", lower)

    @property
    def dim(self):
        return self.scale.shape[0]

    @property
    def standard_df(self):
        """Degrees of freedom of the underlying Wishart, ``df - p - 1``."""
        return self.df - self.dim - 1

    @property
    def log_det_scale(self):
        return 2.0 * float(np.log(np.diag(self.chol_scale)).sum())

    def mean(self):
        """Mean matrix ``scale / (df - 2p - 2)``; defined for df > 2p + 2."""
        divisor = self.df - 2 * self.dim - 2
        if not divisor > 0:
            raise ValueError(f"mean requires df > 2p + 2 = {2 * self.dim + 2}, got df = {self.df}")
        return self.scale / divisor


def sample_mvn(cov, n, seed):
    """n i.i.d. rows from the zero-mean normal with the given covariance.

    Rows are generated as ``z @ L.T`` with ``L`` the lower Cholesky factor,
    so output is deterministic given the seed.
    """
    cov = as_symmetric(cov, "cov")
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    lower = cholesky(cov, "cov")
    z = seed.generator().standard_normal((int(n), cov.shape[0]))
    return z @ lower.T


def _bartlett_factor(p, df, rng):
    # lower-triangular A with A_ii^2 ~ chi2(df - i + 1), i = 1..p, and
    # independent standard normals below the diagonal
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    rows, cols = np.tril_indices(p, -1)
    if rows.size:
        a[rows, cols] = rng.standard_normal(rows.size)
    return a


def sample_wishart(scale, df_std, seed):
    """One Wishart draw (conventional parameterization, mean df_std * scale).

    Bartlett construction: ``W = (L A)(L A)^T`` with ``L = chol(scale)``.
    Requires ``df_std > p - 1``; the draw is positive definite with
    probability one.
    """
    scale = as_symmetric(scale, "scale")
    p = scale.shape[0]
    if not df_std > p - 1:
        raise ValueError(f"df_std must exceed p - 1 = {p - 1}, got {df_std}")
    lower = cholesky(scale, "scale")
    t = lower @ _bartlett_factor(p, df_std, seed.generator())
    return t @ t.T


def inverse_wishart_draws(params, count, rng):
    """Stack of ``count`` inverse-Wishart draws from one generator stream.

    Each draw is the inverse of a Wishart(scale^{-1}, df - p - 1) draw.
    """
    p = params.dim
    inv_scale = spd_inverse(params.scale, "scale")
    lower = cholesky(inv_scale, "inverted scale")
    draws = np.empty((count, p, p))
    eye = np.eye(p)
    with single_threaded_blas():
        for i in range(count):
            t = lower @ _bartlett_factor(p, params.standard_df, rng)
            u = solve_triangular(t, eye, lower=True, check_finite=False)
            sigma = u.T @ u
            draws[i] = 0.5 * (sigma + sigma.T)
    return draws


def sample_inverse_wishart(params, seed):
    """One inverse-Wishart draw; see :func:`inverse_wishart_draws`."""
    return inverse_wishart_draws(params, 1, seed.generator())[0]


def log_multivariate_gamma(p, a):
    """log Gamma_p(a) = p(p-1)/4 * log(pi) + sum_j log Gamma(a + (1-j)/2)."""
    p = int(p)
    if p < 1:
        raise ValueError(f"dimension must be positive, got {p}")
    if not a > (p - 1) / 2:
        raise ValueError(f"argument must exceed (p-1)/2 = {(p - 1) / 2}, got {a}")
    j = np.arange(1, p + 1)
    return 0.25 * p * (p - 1) * np.log(np.pi) + float(gammaln(a + (1.0 - j) / 2.0).sum())


def iw_log_normalizer(params):
    """Log normalizing constant of the inverse-Wishart density."""
    m = params.standard_df
    p = params.dim
    return 0.5 * m * params.log_det_scale - 0.5 * m * p * np.log(2.0) - log_multivariate_gamma(p, 0.5 * m)


def iw_log_density(sigma, params):
    """Exact normalized inverse-Wishart log density at ``sigma``."""
    sigma = as_symmetric(sigma, "sigma")
    if sigma.shape[0] != params.dim:
        raise ValueError(f"sigma has dimension {sigma.shape[0]}, params have {params.dim}")
    lower = cholesky(sigma, "sigma")
    log_det_sigma = 2.0 * float(np.log(np.diag(lower)).sum())
    half = solve_triangular(lower, params.chol_scale, lower=True)
    trace_term = float((half * half).sum())
    m = params.standard_df
    p = params.dim
    return iw_log_normalizer(params) - 0.5 * (m + p + 1) * log_det_sigma - 0.5 * trace_term


def _lower_banded_storage(cov, k):
    # diagonal-ordered lower form: row r holds diag(cov, -r) left-aligned
    p = cov.shape[0]
    ab = np.zeros((k + 1, p))
    for r in range(k + 1):
        ab[r, : p - r] = np.diagonal(cov, -r)
    return ab


def gaussian_log_likelihood(cov, rows, bandwidth=None):
    """Per-row log density of zero-mean normal rows under ``cov``.

    When ``bandwidth`` is given and smaller than p - 1, the covariance must
    be banded at that bandwidth and the banded Cholesky path is used; the
    result is identical to the dense path.
    """
    cov = np.asarray(cov, dtype=float)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    p = cov.shape[0]
    if rows.shape[1] != p:
        raise ValueError(f"rows have {rows.shape[1]} columns, covariance has dimension {p}")
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(rows))):
        raise NumericError("non-finite covariance or data rows")
    if bandwidth is not None and 0 <= bandwidth < p - 1:
        idx = np.arange(p)
        if np.any(cov[np.abs(idx[:, None] - idx[None, :]) > bandwidth] != 0.0):
            raise ValueError(f"covariance has entries beyond bandwidth {bandwidth}")
        try:
            cb = cholesky_banded(_lower_banded_storage(cov, int(bandwidth)), lower=True)
        except np.linalg.LinAlgError as err:
            raise NotPositiveDefiniteError("covariance is not positive definite") from err
        log_det = 2.0 * float(np.log(cb[0]).sum())
        y = solve_banded((int(bandwidth), 0), cb, rows.T, check_finite=False)
    else:
        lower = cholesky(cov, "covariance")
        log_det = 2.0 * float(np.log(np.diag(lower)).sum())
        y = solve_triangular(lower, rows.T, lower=True, check_finite=False)
    quad = (y * y).sum(axis=0)
    return -0.5 * (p * LOG_2PI + log_det + quad)
