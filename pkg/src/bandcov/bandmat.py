"""Dense symmetric-matrix primitives for banded covariance work.

Banding, positive-definite adjustment, eigenvalue extremes, spectral norm,
and membership checks for the class of banded well-conditioned covariances.
All functions are pure; matrices are plain float ndarrays stored dense
(target dimensions stay at a few hundred, where O(p^3) eigendecompositions
are cheap and deterministic).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

__all__ = [
    "BandSpec",
    "ClassBounds",
    "as_symmetric",
    "band_mask",
    "band",
    "pd_band_adjust",
    "spectral_norm",
    "extreme_eigenvalues",
    "class_membership",
]

# relative asymmetry beyond this is an error; below it the matrix is averaged
# with its transpose (guards against drift in long sampling chains)
ASYMMETRY_TOLERANCE = 1e-8


@dataclass(frozen=True)
class BandSpec:
    """Bandwidth ``k`` for symmetric matrices of dimension ``p``.

    Entries with |i - j| > k are outside the band; 0 <= k <= p - 1.
    """

    k: int
    p: int

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"dimension must be positive, got p={self.p}")
        if not 0 <= self.k <= self.p - 1:
            raise ValueError(f"bandwidth must satisfy 0 <= k <= p-1, got k={self.k}, p={self.p}")


@dataclass(frozen=True)
class ClassBounds:
    """Eigenvalue box 0 < lower <= upper for the banded covariance class."""

    upper: float
    lower: float

    def __post_init__(self):
        if not 0 < self.lower <= self.upper < np.inf:
            raise ValueError(f"bounds must satisfy 0 < lower <= upper, got ({self.lower}, {self.upper})")


def as_symmetric(m, name="matrix"):
    """Validate a square symmetric matrix and return its symmetrized copy.

    Entries must be finite.  Relative asymmetry above 1e-8 raises
    ``ValueError``; smaller asymmetry is silently averaged away.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} has non-finite entries")
    scale = float(np.abs(m).max())
    asymmetry = float(np.abs(m - m.T).max())
    if asymmetry > ASYMMETRY_TOLERANCE * max(scale, 1.0):
        raise ValueError(f"{name} is asymmetric beyond tolerance (max deviation {asymmetry:.3e})")
    return 0.5 * (m + m.T)


def band_mask(p, k):
    """Boolean (p, p) mask of the band |i - j| <= k."""
    idx = np.arange(p)
    return np.abs(idx[:, None] - idx[None, :]) <= k


def _resolve_spec(spec, p):
    if isinstance(spec, BandSpec):
        if spec.p != p:
            raise ValueError(f"band spec is for dimension {spec.p}, matrix has dimension {p}")
        return spec
    return BandSpec(int(spec), p)


def band(m, spec):
    """Zero all entries with |i - j| > k, keeping the band unchanged.

    The result is symmetric but not necessarily positive definite.
    """
    m = as_symmetric(m)
    spec = _resolve_spec(spec, m.shape[0])
    return np.where(band_mask(spec.p, spec.k), m, 0.0)


def pd_band_adjust(m, spec, eps):
    """Band the matrix, then lift its spectrum so lambda_min >= eps.

    Returns the banded matrix unchanged when its smallest eigenvalue is
    already at least ``eps``; otherwise adds ``(eps - lambda_min) * I``.
    The comparison against ``eps`` is exact (no tolerance), so the output
    is k-banded with smallest eigenvalue >= eps up to eigensolver error.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    banded = band(m, spec)
    lam_min = float(np.linalg.eigvalsh(banded)[0])
    if lam_min < eps:
        banded = banded + (eps - lam_min) * np.eye(banded.shape[0])
    return banded


def spectral_norm(m):
    """Largest absolute eigenvalue of a symmetric matrix."""
    m = as_symmetric(m)
    eigenvalues = np.linalg.eigvalsh(m)
    return float(max(abs(eigenvalues[0]), abs(eigenvalues[-1])))


def extreme_eigenvalues(m):
    """(smallest, largest) eigenvalue of a symmetric matrix."""
    m = as_symmetric(m)
    eigenvalues = np.linalg.eigvalsh(m)
    return float(eigenvalues[0]), float(eigenvalues[-1])


def class_membership(m, spec, bounds):
    """True iff all off-band entries are exactly zero and the spectrum lies
    inside ``[bounds.lower, bounds.upper]``."""
    m = as_symmetric(m)
    spec = _resolve_spec(spec, m.shape[0])
    if not np.all(m[~band_mask(spec.p, spec.k)] == 0.0):
        return False
    lam_min, lam_max = extreme_eigenvalues(m)
    return bounds.lower <= lam_min and lam_max <= bounds.upper
