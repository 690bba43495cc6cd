"""Conjugate covariance posteriors and post-processing of their draw sets.

Workflow: update an inverse-Wishart prior with zero-mean data, sample the
resulting (unconstrained) posterior, then map every draw into the banded
class, either by banding plus an eigenvalue floor, or by the dual solve
that matches the draw's inverse on the band.  The distribution of the
mapped draws is the object used for all banded-covariance inference.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._linalg import single_threaded_blas
from .bandmat import band_mask, _resolve_spec
from .errors import InvalidStateError
from .estimators import dual_mle
from .io import read_matrix, write_matrix
from .sampling import IWParams, SeedSpec, inverse_wishart_draws

__all__ = [
    "PostProcessing",
    "RAW",
    "PosteriorSampleSet",
    "conjugate_update",
    "draw_initial_samples",
    "banding_post_process",
    "dual_post_process",
    "posterior_mean",
    "default_epsilon",
    "save_sample_set",
    "load_sample_set",
]


@dataclass(frozen=True)
class PostProcessing:
    """Descriptor of the map applied to a draw set: none, banding, or dual."""

    kind: str
    k: int | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "banding", "dual"):
            raise ValueError(f"unknown post-processing kind {self.kind!r}")


RAW = PostProcessing("none")


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Ordered covariance draws plus the provenance that produced them.

    ``params`` are the inverse-Wishart parameters of the unconstrained
    posterior the draws started from, ``seed`` the stream that generated
    them, and ``processing`` what has been applied since.  Draws are stored
    read-only; all draws share one dimension.
    """

    draws: np.ndarray
    params: IWParams
    seed: SeedSpec
    processing: PostProcessing = RAW

    def __post_init__(self):
        draws = np.array(self.draws, dtype=float)
        if draws.ndim != 3 or draws.shape[1] != draws.shape[2]:
            raise ValueError(f"draws must be a (count, p, p) stack, got shape {draws.shape}")
        if draws.shape[0] < 1:
            raise ValueError("sample set must contain at least one draw")
        if draws.shape[1] != self.params.dim:
            raise ValueError(
                f"draw dimension {draws.shape[1]} does not match parameter dimension {self.params.dim}"
            )
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def count(self):
        return self.draws.shape[0]

    @property
    def dim(self):
        return self.draws.shape[1]

    def __len__(self):
        return self.count

    def __iter__(self):
        return iter(self.draws)

    def head(self, count):
        """Sample set holding the first ``count`` draws, same provenance."""
        if not 1 <= count <= self.count:
            raise ValueError(f"count must be in [1, {self.count}], got {count}")
        return PosteriorSampleSet(self.draws[:count], self.params, self.seed, self.processing)


def conjugate_update(prior, data):
    """Posterior parameters after observing zero-mean rows.

    Adds the raw second-moment ``X^T X`` to the scale and the row count to
    the degrees of freedom.  No centering happens here.
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if x.shape[0] < 1:
        raise ValueError("data must contain at least one row")
    if x.shape[1] != prior.dim:
        raise ValueError(f"data has {x.shape[1]} columns, prior has dimension {prior.dim}")
    return IWParams(prior.scale + x.T @ x, prior.df + x.shape[0])


def draw_initial_samples(post, count, seed):
    """``count`` independent inverse-Wishart draws from one seeded stream."""
    if count < 1:
        raise ValueError(f"draw count must be >= 1, got {count}")
    draws = inverse_wishart_draws(post, int(count), seed.generator())
    return PosteriorSampleSet(draws, post, seed, RAW)


def _require_unprocessed(sample_set):
    if sample_set.processing.kind != "none":
        raise InvalidStateError(
            f"sample set was already post-processed ({sample_set.processing.kind}); "
            "post-processing applies to initial draws only"
        )


def banding_post_process(sample_set, spec, eps):
    """Band every draw and lift eigenvalues to at least ``eps``.

    Elementwise application of the banding adjustment, order preserved.
    The result carries the ``banding(k, eps)`` descriptor; applying any
    post-processing twice is an error.
    """
    _require_unprocessed(sample_set)
    spec = _resolve_spec(spec, sample_set.dim)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    mask = band_mask(spec.p, spec.k)
    banded = np.where(mask, sample_set.draws, 0.0)
    lam_min = np.linalg.eigvalsh(banded)[:, 0]
    shift = np.where(lam_min < eps, eps - lam_min, 0.0)
    out = banded + shift[:, None, None] * np.eye(spec.p)
    return PosteriorSampleSet(
        out, sample_set.params, sample_set.seed, PostProcessing("banding", k=spec.k, eps=float(eps))
    )


def dual_post_process(sample_set, spec, tol=1e-8, max_iter=500):
    """Replace every draw by its banded dual solution.

    Each output draw is the k-banded positive definite matrix whose inverse
    agrees with the draw's inverse on the band.  A failure on any draw
    aborts the whole batch so downstream Monte Carlo averages stay unbiased.
    """
    _require_unprocessed(sample_set)
    spec = _resolve_spec(spec, sample_set.dim)
    out = np.empty_like(sample_set.draws)
    with single_threaded_blas():
        for i, draw in enumerate(sample_set.draws):
            out[i] = dual_mle(draw, spec, tol=tol, max_iter=max_iter)
    return PosteriorSampleSet(
        out, sample_set.params, sample_set.seed, PostProcessing("dual", k=spec.k)
    )


def posterior_mean(sample_set):
    """Entrywise average of the draws (banded whenever all draws are)."""
    return sample_set.draws.mean(axis=0)


def default_epsilon(k, p, n):
    """Eigenvalue-floor schedule matching the convergence-rate analysis.

    ``sqrt(log(max(k, 2))^2 * (k + log p) / n)``; used when cross-validated
    selection is disabled.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return float(np.sqrt(np.log(max(k, 2)) ** 2 * (k + np.log(p)) / n))


def save_sample_set(sample_set, directory):
    """Write draws as CSV matrices plus a JSON manifest with provenance."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    draw_files = []
    for i, draw in enumerate(sample_set.draws):
        name = f"draw_{i:05d}.csv"
        write_matrix(directory / name, draw)
        draw_files.append(name)
    write_matrix(directory / "posterior_scale.csv", sample_set.params.scale)
    manifest = {
        "count": sample_set.count,
        "dim": sample_set.dim,
        "posterior": {"scale_file": "posterior_scale.csv", "df": sample_set.params.df},
        "seed": {
            "root_seed": sample_set.seed.root_seed,
            "stream_index": sample_set.seed.stream_index,
        },
        "processing": {
            "kind": sample_set.processing.kind,
            "k": sample_set.processing.k,
            "eps": sample_set.processing.eps,
        },
        "draw_files": draw_files,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_sample_set(directory):
    """Inverse of :func:`save_sample_set`."""
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    scale = read_matrix(directory / manifest["posterior"]["scale_file"])
    params = IWParams(scale, manifest["posterior"]["df"])
    seed = SeedSpec(manifest["seed"]["root_seed"], manifest["seed"]["stream_index"])
    processing = PostProcessing(
        manifest["processing"]["kind"], manifest["processing"]["k"], manifest["processing"]["eps"]
    )
    draws = np.stack([read_matrix(directory / name) for name in manifest["draw_files"]])
    return PosteriorSampleSet(draws, params, seed, processing)
