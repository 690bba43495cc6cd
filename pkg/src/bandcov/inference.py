"""Covariance functionals and their interval estimates.

Quantile and highest-density credible intervals from posterior draws, and
delta-method confidence intervals built on the Fisher information of the
banded Gaussian model.  The in-band upper triangle is flattened through
``BandIndexMap``; the Fisher block is contracted directly entry by entry,
so the p^2 x p^2 Kronecker product is never materialized.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

from ._linalg import cholesky, spd_inverse
from .bandmat import as_symmetric, band_mask, _resolve_spec
from .errors import NumericError

__all__ = [
    "BandIndexMap",
    "Functional",
    "IntervalEstimate",
    "conditional_mean",
    "conditional_mean_functional",
    "q_matrix",
    "band_fisher_block",
    "quantile_credible_interval",
    "hpd_interval",
    "delta_method_ci",
    "functional_gradient_fd",
]


@dataclass(frozen=True)
class IntervalEstimate:
    """Lower/upper bounds with the nominal level and producing method."""

    lower: float
    upper: float
    level: float
    method: str

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"interval bounds out of order: ({self.lower}, {self.upper})")
        if not 0 < self.level < 1:
            raise ValueError(f"level must be in (0, 1), got {self.level}")

    @property
    def length(self):
        return self.upper - self.lower

    def contains(self, value):
        return self.lower <= value <= self.upper

    def to_json(self):
        return {"lower": self.lower, "upper": self.upper, "level": self.level, "method": self.method}


@dataclass(frozen=True)
class BandIndexMap:
    """Bijection between in-band upper-triangle pairs and flat indices.

    Pairs (i, j) with i <= j and |i - j| <= k, ordered row-major; the flat
    vector has length (k+1)p - k(k+1)/2.
    """

    p: int
    k: int

    def __post_init__(self):
        _resolve_spec(self.k, self.p)

    @cached_property
    def pairs(self):
        return tuple(
            (i, j) for i in range(self.p) for j in range(i, min(i + self.k, self.p - 1) + 1)
        )

    @property
    def p_star(self):
        return (self.k + 1) * self.p - self.k * (self.k + 1) // 2

    def vecb(self, matrix):
        """Flatten the in-band upper triangle of a symmetric matrix."""
        m = as_symmetric(matrix)
        if m.shape[0] != self.p:
            raise ValueError(f"matrix dimension {m.shape[0]} does not match map dimension {self.p}")
        rows, cols = zip(*self.pairs)
        return m[np.array(rows), np.array(cols)]

    def matrix(self, values):
        """Symmetric banded matrix with the given in-band entries."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.p_star,):
            raise ValueError(f"expected {self.p_star} entries, got shape {values.shape}")
        out = np.zeros((self.p, self.p))
        for idx, (i, j) in enumerate(self.pairs):
            out[i, j] = values[idx]
            out[j, i] = values[idx]
        return out


@dataclass(frozen=True)
class Functional:
    """Scalar functional of a covariance matrix.

    ``fn(sigma, x_head)`` evaluates the functional; ``x_head`` is the
    optional conditioning vector and is None for functionals that ignore
    it.  ``gradient(point, index_map, x_head)``, when provided, returns the
    analytic derivative with respect to the flattened in-band entries and
    replaces finite differencing.
    """

    name: str
    fn: object
    gradient: object = None
    uses_conditioning: bool = False

    def evaluate(self, sigma, x_head=None):
        value = float(self.fn(sigma, x_head) if self.uses_conditioning else self.fn(sigma, None))
        if not np.isfinite(value):
            raise NumericError(f"functional {self.name!r} evaluated to a non-finite value")
        return value


def conditional_mean(sigma, x_head):
    """Gaussian conditional expectation of the last coordinate given the rest."""
    sigma = as_symmetric(sigma)
    p = sigma.shape[0]
    x_head = np.asarray(x_head, dtype=float)
    if x_head.shape != (p - 1,):
        raise ValueError(f"conditioning vector must have length {p - 1}, got {x_head.shape}")
    lower = cholesky(sigma[: p - 1, : p - 1], "leading block")
    y = solve_triangular(lower, x_head, lower=True)
    w = solve_triangular(lower.T, y, lower=False)
    return float(sigma[p - 1, : p - 1] @ w)


def conditional_mean_functional():
    """Functional wrapper around :func:`conditional_mean`."""
    return Functional(
        name="conditional_mean",
        fn=lambda sigma, x_head: conditional_mean(sigma, x_head),
        uses_conditioning=True,
    )


def q_matrix(index_map):
    """0/1 expansion matrix Q with ``vec(sigma) = Q @ vecb(sigma)``.

    Rows follow column-major vec order; each row has at most one 1, placed
    where the row's (i, j) entry equals the column's unordered pair.
    """
    p = index_map.p
    q = np.zeros((p * p, index_map.p_star))
    for col, (i, j) in enumerate(index_map.pairs):
        q[j * p + i, col] = 1.0
        if i != j:
            q[i * p + j, col] = 1.0
    return q


def band_fisher_block(sigma, index_map):
    """In-band block of the Fisher information contraction.

    Entry-by-entry evaluation of ``Q^T (sigma^{-1} (x) sigma^{-1}) Q`` using
    ``(sigma^{-1} (x) sigma^{-1})[(i,j),(a,b)] = g_ia g_jb`` with
    ``g = sigma^{-1}``; the Kronecker product itself is never formed.
    """
    g = spd_inverse(as_symmetric(sigma), "sigma")
    pairs = index_map.pairs
    i_idx = np.array([i for i, _ in pairs])
    j_idx = np.array([j for _, j in pairs])
    base = g[np.ix_(i_idx, i_idx)] * g[np.ix_(j_idx, j_idx)] + g[np.ix_(i_idx, j_idx)] * g[
        np.ix_(j_idx, i_idx)
    ]
    mult = np.where(i_idx == j_idx, 1.0, 2.0)
    return 0.5 * np.outer(mult, mult) * base


def quantile_credible_interval(values, level):
    """Equal-tailed interval from empirical quantiles (linear interpolation)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two values")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    alpha = 1.0 - level
    lower, upper = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0])
    return IntervalEstimate(float(lower), float(upper), level, "quantile")


def hpd_interval(values, level):
    """Shortest interval containing ``ceil(level * len(values))`` sorted values."""
    values = np.sort(np.asarray(values, dtype=float))
    size = values.size
    if size < 2:
        raise ValueError("need at least two values")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    n_in = min(size, max(2, int(np.ceil(level * size))))
    widths = values[n_in - 1 :] - values[: size - n_in + 1]
    start = int(np.argmin(widths))
    return IntervalEstimate(float(values[start]), float(values[start + n_in - 1]), level, "hpd")


def functional_gradient_fd(functional, point, index_map, x_head=None):
    """Central finite-difference gradient over the flattened in-band entries.

    Each off-diagonal coordinate perturbs both symmetric entries; step size
    is ``max(1e-6, 1e-6 |coordinate|)``.
    """
    point = np.asarray(point, dtype=float)
    grad = np.empty(point.size)
    for idx in range(point.size):
        step = max(1e-6, 1e-6 * abs(point[idx]))
        plus = point.copy()
        plus[idx] += step
        minus = point.copy()
        minus[idx] -= step
        f_plus = functional.evaluate(index_map.matrix(plus), x_head)
        f_minus = functional.evaluate(index_map.matrix(minus), x_head)
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite finite-difference gradient")
    return grad


def delta_method_ci(sigma_hat, index_map, n, functional, level, x_head=None):
    """Asymptotic confidence interval for a functional of the banded MLE.

    Variance estimate ``2 * grad @ fisher_block^{-1} @ grad``; interval is
    the point estimate plus/minus ``z * sqrt(variance / n)``.
    """
    sigma_hat = as_symmetric(sigma_hat, "sigma_hat")
    if sigma_hat.shape[0] != index_map.p:
        raise ValueError("estimate dimension does not match the index map")
    off_band = ~band_mask(index_map.p, index_map.k)
    if not np.all(sigma_hat[off_band] == 0.0):
        raise ValueError("estimate must be exactly banded at the map bandwidth")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    point = index_map.vecb(sigma_hat)
    if functional.gradient is not None:
        grad = np.asarray(functional.gradient(point, index_map, x_head), dtype=float)
    else:
        grad = functional_gradient_fd(functional, point, index_map, x_head)
    fisher = band_fisher_block(sigma_hat, index_map)
    try:
        solved = np.linalg.solve(fisher, grad)
    except np.linalg.LinAlgError as err:
        raise NumericError("singular Fisher block") from err
    variance = 2.0 * float(grad @ solved)
    if variance < 0:
        raise NumericError(f"negative variance estimate {variance}")
    center = functional.evaluate(index_map.matrix(point), x_head)
    half = float(norm.ppf(0.5 + level / 2.0)) * np.sqrt(variance / n)
    return IntervalEstimate(center - half, center + half, level, "delta")
