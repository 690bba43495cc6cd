"""Frequentist estimators of banded covariance matrices.

Sample covariance (zero-mean convention), banded sample covariance, ridge
adjustment, the dual likelihood solver (banded matrix whose inverse matches
the target's inverse on the band), and the constrained Gaussian MLE by
iterative conditional fitting.

The dual solve exploits a structural duality: swapping the roles of
covariance and precision turns it into the decomposable concentration-graph
fit for the band graph, whose cliques are the (k+1)-wide index windows.
The junction-tree closed form gives the solution in one pass; clique-wise
proportional-fitting sweeps run afterwards only if the residual is above
tolerance.
"""

import numpy as np

from ._linalg import cholesky, reject_near_singular, single_threaded_blas, spd_inverse, spd_solve
from .bandmat import as_symmetric, band, band_mask, _resolve_spec
from .errors import ConvergenceError, NumericError

__all__ = [
    "sample_cov",
    "banded_sample_cov",
    "ridge_adjusted_cov",
    "dual_mle",
    "mle_icf",
]


def sample_cov(data):
    """Zero-mean second-moment matrix ``X^T X / n`` (no centering)."""
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n = x.shape[0]
    if n < 1:
        raise ValueError("data must contain at least one row")
    s = x.T @ x / n
    return 0.5 * (s + s.T)


def banded_sample_cov(data, spec):
    """Banded sample covariance; may be indefinite (point estimation only)."""
    return band(sample_cov(data), spec)


def ridge_adjusted_cov(data, eps):
    """Sample covariance plus ``eps * I``; positive definite for eps > 0."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s = sample_cov(data)
    return s + eps * np.eye(s.shape[0])


def _window_slices(p, width):
    return [slice(t, t + width) for t in range(p - width + 1)]


def _band_graph_fit(m, k):
    # decomposable-model closed form: sum of padded clique-block inverses
    # minus padded separator-block inverses, cliques being the (k+1)-windows
    p = m.shape[0]
    width = k + 1
    if width >= p:
        return spd_inverse(m, "target inverse")
    out = np.zeros_like(m)
    cliques = np.stack([m[w, w] for w in _window_slices(p, width)])
    clique_inv = np.linalg.inv(cliques)
    for i, w in enumerate(_window_slices(p, width)):
        out[w, w] += clique_inv[i]
    if k >= 1:
        separators = [slice(t + 1, t + 1 + k) for t in range(p - width)]
        sep_inv = np.linalg.inv(np.stack([m[w, w] for w in separators]))
        for i, w in enumerate(separators):
            out[w, w] -= sep_inv[i]
    return 0.5 * (out + out.T)


def _dual_residual(a, m, mask):
    return float(np.abs((spd_inverse(a, "dual iterate") - m)[mask]).max())


def dual_mle(target, spec, tol=1e-8, max_iter=500):
    """k-banded positive definite matrix whose inverse matches the target's
    inverse on the band.

    Output ``A`` satisfies ``(A^{-1})_ij = (target^{-1})_ij`` for
    |i - j| <= k and ``A_ij = 0`` beyond the band, with max-abs on-band
    residual at most ``tol``.  A banded target is returned unchanged.
    """
    t = as_symmetric(target, "target")
    spec = _resolve_spec(spec, t.shape[0])
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    reject_near_singular(t, "target")
    mask = band_mask(spec.p, spec.k)
    if np.all(t[~mask] == 0.0):
        return t.copy()
    m = spd_inverse(t, "target")
    a = _band_graph_fit(m, spec.k)
    residual = _dual_residual(a, m, mask)
    windows = _window_slices(spec.p, spec.k + 1)
    for _ in range(max_iter):
        if residual <= tol:
            return a
        # proportional-fitting sweep: refresh each clique block so the
        # inverse matches m on that window
        for w in windows:
            fitted = spd_inverse(a, "dual iterate")
            a[w, w] += np.linalg.inv(m[w, w]) - np.linalg.inv(fitted[w, w])
        residual = _dual_residual(a, m, mask)
    if residual > tol:
        raise ConvergenceError(
            f"dual solve did not reach tolerance {tol} in {max_iter} sweeps", residual=residual
        )
    return a


def _gaussian_objective(sigma, s):
    # log|Sigma| + tr(Sigma^{-1} S), the per-observation negative log
    # likelihood up to constants
    lower = cholesky(sigma, "iterate")
    log_det = 2.0 * float(np.log(np.diag(lower)).sum())
    return log_det + float(np.trace(spd_solve(sigma, s, "iterate")))


def _kkt_residual(sigma, s, mask):
    inv = spd_inverse(sigma, "iterate")
    return float(np.abs((inv @ s @ inv - inv)[mask]).max())


def mle_icf(s, spec, tol=1e-8, max_iter=500, callback=None):
    """Gaussian MLE over k-banded covariances by iterative conditional fitting.

    Maximizes the likelihood at second-moment matrix ``s`` subject to exact
    off-band zeros, cycling through variables and refitting each one's
    in-band covariances through the conditional regression on pseudo
    variables.  Stationarity is certified by the on-band KKT residual
    ``max |(Sigma^{-1} s Sigma^{-1} - Sigma^{-1})_ij| <= tol``.

    ``s`` must be numerically positive definite; apply
    :func:`ridge_adjusted_cov` upstream when it is not (e.g. p >= n).
    ``callback(sweep, objective, residual)`` is invoked after each sweep.
    """
    s = as_symmetric(s, "second-moment matrix")
    spec = _resolve_spec(spec, s.shape[0])
    reject_near_singular(s, "second-moment matrix")
    p, k = spec.p, spec.k
    mask = band_mask(p, k)
    sigma = np.diag(np.diag(s)).copy()
    with single_threaded_blas():
        objective = _gaussian_objective(sigma, s)
        residual = np.inf
        return _icf_sweeps(sigma, s, p, k, mask, objective, residual, tol, max_iter, callback)


def _icf_sweeps(sigma, s, p, k, mask, objective, residual, tol, max_iter, callback):
    for sweep in range(max_iter):
        for i in range(p):
            others = np.r_[0:i, i + 1 : p]
            in_band = np.flatnonzero(np.abs(others - i) <= k)
            if in_band.size == 0:
                sigma[i, i] = s[i, i]
                continue
            b_full = spd_inverse(sigma[np.ix_(others, others)], "conditional block")
            b_rows = b_full[in_band]
            gram = b_rows @ s[np.ix_(others, others)] @ b_rows.T
            target = b_rows @ s[others, i]
            beta = np.linalg.solve(gram, target)
            residual_var = float(s[i, i] - beta @ target)
            if residual_var <= 0:
                raise NumericError(f"nonpositive conditional variance at variable {i}")
            sigma[i, others] = 0.0
            sigma[others, i] = 0.0
            partners = others[in_band]
            sigma[i, partners] = beta
            sigma[partners, i] = beta
            sigma[i, i] = residual_var + float(beta @ b_full[np.ix_(in_band, in_band)] @ beta)
        new_objective = _gaussian_objective(sigma, s)
        if new_objective > objective + 1e-9 * max(1.0, abs(objective)):
            raise NumericError(
                f"likelihood decreased between sweeps ({objective:.12g} -> {new_objective:.12g})"
            )
        objective = new_objective
        residual = _kkt_residual(sigma, s, mask)
        if callback is not None:
            callback(sweep, objective, residual)
        if residual <= tol:
            return sigma
    raise ConvergenceError(
        f"iterative conditional fitting did not reach tolerance {tol} in {max_iter} sweeps",
        residual=residual,
    )
