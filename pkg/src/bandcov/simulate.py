"""Monte Carlo harness: true-covariance generators, point-estimation and
interval experiments over a registry of estimators, and timing summaries.

Experiments are reproducible: every replication pulls data and posterior
draws from substreams derived from the root seed, so results are identical
across runs and independent of execution order (wall-clock fields aside).
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bandmat import spectral_norm
from .crossval import (
    CVGrid,
    frequentist_loo_score,
    select_bandwidth,
    select_epsilon,
    select_frequentist_tuning,
)
from .errors import BandcovError
from .estimators import banded_sample_cov, dual_mle, mle_icf, ridge_adjusted_cov, sample_cov
from .inference import (
    BandIndexMap,
    IntervalEstimate,
    conditional_mean_functional,
    delta_method_ci,
    hpd_interval,
    quantile_credible_interval,
)
from .posterior import (
    PosteriorSampleSet,
    banding_post_process,
    conjugate_update,
    default_epsilon,
    draw_initial_samples,
    dual_post_process,
    posterior_mean,
)
from .sampling import IWParams, SeedSpec, sample_mvn

__all__ = [
    "TrueCovSpec",
    "ExperimentConfig",
    "ReplicationRecord",
    "ExperimentResult",
    "ESTIMATOR_NAMES",
    "make_sigma1",
    "make_sigma2",
    "make_sigma3",
    "make_true_cov",
    "default_prior",
    "run_point_estimation",
    "run_interval_experiment",
    "posterior_spectral_loss",
    "timing_summary",
]

# substream layout under the root seed; stream 0 is reserved for the
# random-truth generator
_PURPOSE_DATA = 1
_PURPOSE_FIT = 2
_PURPOSE_XHEAD = 3


def _stream_index(purpose, n_index=0, rep=0, slot=0):
    return ((purpose * 1024 + n_index) * 1_048_576 + rep) * 64 + slot


@dataclass(frozen=True)
class TrueCovSpec:
    """Recipe for one true banded covariance matrix.

    ``sigma1``: polynomially decaying off-diagonals, banded, spectrum
    lifted to the floor.  ``sigma2``: triangular taper.  ``sigma3``:
    random unit-diagonal banded Cholesky factor with inverse-gamma
    innovation variances (drawn once, from ``seed``).
    """

    kind: str
    p: int
    k0: int
    rho: float = 0.6
    alpha_decay: float = 0.1
    seed: int = 0
    lambda_floor: float = 0.5

    def __post_init__(self):
        if self.kind not in ("sigma1", "sigma2", "sigma3"):
            raise ValueError(f"unknown true-covariance kind {self.kind!r}")
        if not 0 <= self.k0 <= self.p - 1:
            raise ValueError(f"k0 must be in [0, p-1], got k0={self.k0}, p={self.p}")
        if not -1 < self.rho < 1:
            raise ValueError(f"rho must be in (-1, 1), got {self.rho}")
        if not self.lambda_floor > 0:
            raise ValueError(f"lambda_floor must be positive, got {self.lambda_floor}")


def _lift_to_floor(matrix, floor):
    # unconditional spectral shift; the output's smallest eigenvalue equals
    # the floor exactly (up to eigensolver tolerance)
    lam_min = float(np.linalg.eigvalsh(matrix)[0])
    return matrix + (floor - lam_min) * np.eye(matrix.shape[0])


def make_sigma1(spec):
    """Banded polynomial-decay covariance, spectrum lifted to the floor."""
    if spec.kind != "sigma1":
        raise ValueError(f"expected kind sigma1, got {spec.kind}")
    offsets = np.abs(np.subtract.outer(np.arange(spec.p), np.arange(spec.p)))
    decayed = spec.rho * np.power(np.maximum(offsets, 1), -(spec.alpha_decay + 1.0))
    base = np.where(offsets == 0, 1.0, decayed)
    banded = np.where(offsets <= spec.k0, base, 0.0)
    return _lift_to_floor(banded, spec.lambda_floor)


def make_sigma2(spec):
    """Triangular-taper covariance, spectrum lifted to the floor."""
    if spec.kind != "sigma2":
        raise ValueError(f"expected kind sigma2, got {spec.kind}")
    offsets = np.abs(np.subtract.outer(np.arange(spec.p), np.arange(spec.p)))
    base = np.maximum(1.0 - offsets / (spec.k0 + 1.0), 0.0)
    return _lift_to_floor(base, spec.lambda_floor)


def make_sigma3(spec):
    """Random banded-Cholesky covariance, drawn once from the spec seed.

    Unit-diagonal lower factor with standard-normal entries on the first
    k0 subdiagonals and inverse-gamma(shape 5, scale 1) innovation
    variances; the product is exactly k0-banded.
    """
    if spec.kind != "sigma3":
        raise ValueError(f"expected kind sigma3, got {spec.kind}")
    rng = SeedSpec(spec.seed, 0).generator()
    lower = np.eye(spec.p)
    rows, cols = np.tril_indices(spec.p, -1)
    keep = rows - cols <= spec.k0
    lower[rows[keep], cols[keep]] = rng.standard_normal(int(keep.sum()))
    innovations = 1.0 / rng.gamma(5.0, 1.0, size=spec.p)
    base = (lower * innovations) @ lower.T
    return _lift_to_floor(base, spec.lambda_floor)


_GENERATORS = {"sigma1": make_sigma1, "sigma2": make_sigma2, "sigma3": make_sigma3}


def make_true_cov(spec):
    return _GENERATORS[spec.kind](spec)


def default_prior(p):
    """Identity-scale prior with degrees of freedom 2p + 3."""
    return IWParams(np.eye(p), 2 * p + 3)


def _default_eps_grid():
    return tuple(np.geomspace(1e-3, 1.0, 10))


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one simulation: truth, sample sizes, estimators,
    draw count, tuning policies, and the root seed."""

    true_cov: TrueCovSpec
    n_values: tuple
    replications: int
    estimators: tuple
    posterior_draws: int = 500
    bandwidth_policy: str = "known"  # "known" uses true_cov.k0, "cv" selects
    eps_policy: object = "cv"  # "cv" | "theory" | fixed float
    freq_eps: object = "cv"  # "cv" | fixed float
    seed: int = 0
    eps_grid: tuple = field(default_factory=_default_eps_grid)
    bandwidth_grid: tuple | None = None
    interval_method: str = "quantile"  # "quantile" | "hpd"
    level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        if self.bandwidth_grid is not None:
            object.__setattr__(self, "bandwidth_grid", tuple(int(k) for k in self.bandwidth_grid))
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be a nonempty list of positive integers")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; registry: {sorted(ESTIMATOR_NAMES)}")
        if self.bandwidth_policy not in ("known", "cv"):
            raise ValueError(f"bandwidth_policy must be 'known' or 'cv', got {self.bandwidth_policy}")
        if self.interval_method not in ("quantile", "hpd"):
            raise ValueError(f"interval_method must be 'quantile' or 'hpd', got {self.interval_method}")

    def to_json(self):
        payload = asdict(self)
        payload["true_cov"] = asdict(self.true_cov)
        payload["n_values"] = list(self.n_values)
        payload["estimators"] = list(self.estimators)
        payload["eps_grid"] = list(self.eps_grid)
        if self.bandwidth_grid is not None:
            payload["bandwidth_grid"] = list(self.bandwidth_grid)
        return payload

    @classmethod
    def from_json(cls, payload):
        payload = dict(payload)
        payload["true_cov"] = TrueCovSpec(**payload["true_cov"])
        if payload.get("bandwidth_grid") is not None:
            payload["bandwidth_grid"] = tuple(payload["bandwidth_grid"])
        return cls(**payload)


@dataclass
class ReplicationRecord:
    """Outcome of one (estimator, n, replication) work unit."""

    estimator: str
    n: int
    replication: int
    error: float | None = None
    covered: bool | None = None
    length: float | None = None
    seconds: float = 0.0
    failed: bool = False
    message: str = ""

    def to_json(self):
        return asdict(self)


@dataclass
class ExperimentResult:
    """Cell summaries plus the per-replication records they derive from."""

    mode: str
    config: dict
    cells: dict
    records: list

    def payload(self, include_timing=True):
        records = [r.to_json() for r in self.records]
        if not include_timing:
            for rec in records:
                rec.pop("seconds", None)
        cells = self.cells
        if not include_timing and self.mode == "timing":
            cells = {}
        return {"mode": self.mode, "config": self.config, "cells": cells, "records": records}

    def to_json(self):
        return self.payload(include_timing=True)

    @classmethod
    def from_json(cls, payload):
        records = [ReplicationRecord(**rec) for rec in payload["records"]]
        return cls(payload["mode"], payload["config"], payload["cells"], records)

    def cell(self, estimator, n):
        return self.cells[estimator][str(n)]

    def table_rows(self):
        """Wide rows (estimator first) for the flat CSV table."""
        ns = sorted({rec.n for rec in self.records})
        if self.mode == "interval":
            header = ["estimator"]
            for n in ns:
                header += [f"coverage n={n}", f"length n={n}"]
        elif self.mode == "timing":
            header = ["estimator"] + [
                f"{stat} n={n}" for n in ns for stat in ("q1", "mean", "median", "q3")
            ]
        else:
            header = ["estimator"] + [f"error n={n}" for n in ns]
        rows = [header]
        for estimator in self.cells:
            row = [estimator]
            for n in ns:
                summary = self.cells[estimator][str(n)]
                if self.mode == "interval":
                    row += [summary["coverage"], summary["mean_length"]]
                elif self.mode == "timing":
                    row += [summary["q1"], summary["mean"], summary["median"], summary["q3"]]
                else:
                    row.append(summary["mean_error"])
            rows.append(row)
        return rows

    def write_table(self, path):
        with open(path, "w") as fh:
            for row in self.table_rows():
                fh.write(",".join(str(v) for v in row) + "\n")


@dataclass
class _FitContext:
    prior: IWParams
    seed: SeedSpec
    bandwidth: int | None  # resolved k, or None to cross-validate
    draw_count: int
    eps_policy: object
    freq_eps: object
    eps_grid: tuple
    bandwidth_grid: tuple
    truth: np.ndarray
    n: int


@dataclass
class _Fitted:
    estimate: np.ndarray
    samples: PosteriorSampleSet | None = None
    bandwidth: int | None = None
    eps: float | None = None


def _resolve_eps(samples, data, k, ctx):
    if ctx.eps_policy == "cv":
        grid = CVGrid(ctx.eps_grid, (k,))
        return float(select_epsilon(samples, data, k, grid, ctx.prior).selected)
    if ctx.eps_policy == "theory":
        return default_epsilon(k, samples.dim, data.shape[0])
    return float(ctx.eps_policy)


def _bayes_samples(data, ctx):
    post = conjugate_update(ctx.prior, data)
    return draw_initial_samples(post, ctx.draw_count, ctx.seed)


def _bayes_bandwidth(samples, data, ctx):
    if ctx.bandwidth is not None:
        return ctx.bandwidth, None
    policy = ctx.eps_policy if ctx.eps_policy in ("cv", "theory") else float(ctx.eps_policy)
    grid = CVGrid(ctx.eps_grid, ctx.bandwidth_grid)
    report = select_bandwidth(samples, data, grid, ctx.prior, eps_policy=policy)
    k = int(report.selected)
    return k, float(report.details["eps_by_bandwidth"][k])


def _fit_ppp(data, ctx):
    samples = _bayes_samples(data, ctx)
    k, eps = _bayes_bandwidth(samples, data, ctx)
    if eps is None:
        eps = _resolve_eps(samples, data, k, ctx)
    processed = banding_post_process(samples, k, eps)
    return _Fitted(posterior_mean(processed), samples=processed, bandwidth=k, eps=eps)


def _fit_dual_ppp(data, ctx):
    samples = _bayes_samples(data, ctx)
    k, _ = _bayes_bandwidth(samples, data, ctx)
    processed = dual_post_process(samples, k)
    return _Fitted(posterior_mean(processed), samples=processed, bandwidth=k)


def _freq_ridge(data, ctx, fitter, k):
    # fitter(covariance, k) -> banded estimate; the ridge size is tuned by
    # refit leave-one-out scoring unless fixed
    if ctx.freq_eps == "cv":
        handle = lambda rows, eps: fitter(ridge_adjusted_cov(rows, eps), k)
        report = select_frequentist_tuning(handle, data, ctx.eps_grid)
        eps = float(report.selected)
    else:
        eps = float(ctx.freq_eps)
    return fitter(ridge_adjusted_cov(data, eps), k), eps


def _freq_bandwidth(data, ctx, fitter):
    if ctx.bandwidth is not None:
        return ctx.bandwidth
    best_k, best_score = None, -np.inf
    for k in ctx.bandwidth_grid:
        if ctx.freq_eps == "cv":
            handle = lambda rows, eps, k=k: fitter(ridge_adjusted_cov(rows, eps), k)
            score = max(select_frequentist_tuning(handle, data, ctx.eps_grid).scores)
        else:
            handle = lambda rows, _unused, k=k: fitter(ridge_adjusted_cov(rows, float(ctx.freq_eps)), k)
            score = frequentist_loo_score(handle, data, None)
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def _fit_dual_mle(data, ctx):
    fitter = lambda cov, k: dual_mle(cov, k)
    k = _freq_bandwidth(data, ctx, fitter)
    estimate, eps = _freq_ridge(data, ctx, fitter, k)
    return _Fitted(estimate, bandwidth=k, eps=eps)


def _fit_mle_icf(data, ctx):
    fitter = lambda cov, k: mle_icf(cov, k)
    k = _freq_bandwidth(data, ctx, fitter)
    estimate, eps = _freq_ridge(data, ctx, fitter, k)
    return _Fitted(estimate, bandwidth=k, eps=eps)


def _fit_banded_sample(data, ctx):
    if ctx.bandwidth is not None:
        k = ctx.bandwidth
    else:
        # scoring needs a positive definite matrix, so a small ridge enters
        # the held-out density only; the estimate itself is unridged
        ridge = float(ctx.freq_eps) if ctx.freq_eps != "cv" else 1e-3
        best_k, best_score = None, -np.inf
        for k in ctx.bandwidth_grid:
            handle = lambda rows, _unused, k=k: banded_sample_cov(rows, k) + ridge * np.eye(
                rows.shape[1]
            )
            score = frequentist_loo_score(handle, data, None)
            if score > best_score:
                best_k, best_score = k, score
        k = best_k
    return _Fitted(banded_sample_cov(data, k), bandwidth=k)


def _fit_sample(data, ctx):
    return _Fitted(sample_cov(data))


def _fit_oracle(data, ctx):
    return _Fitted(ctx.truth.copy())


_REGISTRY = {
    "ppp": _fit_ppp,
    "dual-ppp": _fit_dual_ppp,
    "banded-sample": _fit_banded_sample,
    "dual-mle": _fit_dual_mle,
    "mle-icf": _fit_mle_icf,
    "sample": _fit_sample,
    "oracle": _fit_oracle,
}

ESTIMATOR_NAMES = frozenset(_REGISTRY)


def _make_context(config, truth, prior, n_index, n, rep, est_index):
    root = SeedSpec(config.seed)
    bandwidth = config.true_cov.k0 if config.bandwidth_policy == "known" else None
    k_grid = config.bandwidth_grid
    if k_grid is None:
        k_grid = tuple(range(min(20, config.true_cov.p - 1) + 1))
    return _FitContext(
        prior=prior,
        seed=root.stream(_stream_index(_PURPOSE_FIT, n_index, rep, est_index)),
        bandwidth=bandwidth,
        draw_count=config.posterior_draws,
        eps_policy=config.eps_policy,
        freq_eps=config.freq_eps,
        eps_grid=config.eps_grid,
        bandwidth_grid=k_grid,
        truth=truth,
        n=n,
    )


def _summaries(records, config, mode):
    cells = {}
    for estimator in config.estimators:
        cells[estimator] = {}
        for n in config.n_values:
            matching = [r for r in records if r.estimator == estimator and r.n == n]
            good = [r for r in matching if not r.failed]
            failures = len(matching) - len(good)
            summary = {
                "replications": len(matching),
                "failures": failures,
                "complete": failures <= 0.05 * len(matching),
            }
            if mode == "point":
                summary["mean_error"] = float(np.mean([r.error for r in good])) if good else None
            elif mode == "interval":
                summary["coverage"] = float(np.mean([r.covered for r in good])) if good else None
                summary["mean_length"] = float(np.mean([r.length for r in good])) if good else None
            else:
                seconds = np.array([r.seconds for r in good])
                summary.update(
                    q1=float(np.percentile(seconds, 25)),
                    mean=float(seconds.mean()),
                    median=float(np.median(seconds)),
                    q3=float(np.percentile(seconds, 75)),
                )
            cells[estimator][str(n)] = summary
    return cells


def _config_echo(config, truth):
    # the class bounds of the simulated truths are never pinned a priori,
    # so the realized spectrum is recorded alongside the config
    lam = np.linalg.eigvalsh(truth)
    payload = config.to_json()
    payload["truth_spectrum"] = {"lambda_min": float(lam[0]), "lambda_max": float(lam[-1])}
    return payload


def run_point_estimation(config):
    """Spectral-norm point-estimation experiment over all config cells.

    For every (n, estimator, replication): draw data from the truth, fit,
    and record the spectral distance to the truth.  Per-replication
    failures are recorded and a cell with more than 5% failures is marked
    incomplete.
    """
    truth = make_true_cov(config.true_cov)
    prior = default_prior(config.true_cov.p)
    root = SeedSpec(config.seed)
    records = []
    for n_index, n in enumerate(config.n_values):
        for rep in range(config.replications):
            data = sample_mvn(truth, n, root.stream(_stream_index(_PURPOSE_DATA, n_index, rep)))
            for est_index, name in enumerate(config.estimators):
                ctx = _make_context(config, truth, prior, n_index, n, rep, est_index)
                start = time.perf_counter()
                record = ReplicationRecord(estimator=name, n=n, replication=rep)
                try:
                    fitted = _REGISTRY[name](data, ctx)
                    record.error = spectral_norm(fitted.estimate - truth)
                except BandcovError as err:
                    record.failed = True
                    record.message = str(err)
                record.seconds = time.perf_counter() - start
                records.append(record)
    return ExperimentResult(
        "point", _config_echo(config, truth), _summaries(records, config, "point"), records
    )


_INTERVAL_CAPABLE = {"ppp", "dual-ppp", "mle-icf", "oracle"}


def run_interval_experiment(config, functional=None):
    """Coverage and length of level-``config.level`` intervals for a
    functional of the covariance (default: the conditional mean of the last
    coordinate given the others, conditioning vector redrawn each
    replication)."""
    unsupported = set(config.estimators) - _INTERVAL_CAPABLE
    if unsupported:
        raise ValueError(f"estimators {sorted(unsupported)} do not produce interval estimates")
    if functional is None:
        functional = conditional_mean_functional()
    truth = make_true_cov(config.true_cov)
    p = config.true_cov.p
    prior = default_prior(p)
    root = SeedSpec(config.seed)
    records = []
    for n_index, n in enumerate(config.n_values):
        for rep in range(config.replications):
            data = sample_mvn(truth, n, root.stream(_stream_index(_PURPOSE_DATA, n_index, rep)))
            probe = sample_mvn(truth, 1, root.stream(_stream_index(_PURPOSE_XHEAD, n_index, rep)))
            x_head = probe[0, : p - 1] if functional.uses_conditioning else None
            true_value = functional.evaluate(truth, x_head)
            for est_index, name in enumerate(config.estimators):
                ctx = _make_context(config, truth, prior, n_index, n, rep, est_index)
                start = time.perf_counter()
                record = ReplicationRecord(estimator=name, n=n, replication=rep)
                try:
                    interval = _interval_for(name, data, ctx, functional, x_head, config)
                    record.covered = bool(interval.contains(true_value))
                    record.length = float(interval.length)
                except BandcovError as err:
                    record.failed = True
                    record.message = str(err)
                record.seconds = time.perf_counter() - start
                records.append(record)
    return ExperimentResult(
        "interval", _config_echo(config, truth), _summaries(records, config, "interval"), records
    )


def _interval_for(name, data, ctx, functional, x_head, config):
    if name == "oracle":
        value = functional.evaluate(ctx.truth, x_head)
        return IntervalEstimate(value, value, config.level, "oracle")
    fitted = _REGISTRY[name](data, ctx)
    if fitted.samples is not None:
        values = np.array([functional.evaluate(draw, x_head) for draw in fitted.samples])
        if config.interval_method == "hpd":
            return hpd_interval(values, config.level)
        return quantile_credible_interval(values, config.level)
    index_map = BandIndexMap(ctx.truth.shape[0], fitted.bandwidth)
    return delta_method_ci(fitted.estimate, index_map, ctx.n, functional, config.level, x_head)


def posterior_spectral_loss(sample_set, truth):
    """Monte Carlo posterior-expected spectral distance to the truth."""
    draws = sample_set.draws if isinstance(sample_set, PosteriorSampleSet) else np.asarray(sample_set)
    truth = np.asarray(truth, dtype=float)
    if draws.shape[1:] != truth.shape:
        raise ValueError(f"draw shape {draws.shape[1:]} does not match truth shape {truth.shape}")
    return float(np.mean([spectral_norm(draw - truth) for draw in draws]))


def timing_summary(config):
    """Wall-clock quartiles, mean, and median per estimator cell.

    Fits include their tuning step (cross-validation for the banding floor
    is part of the measured time when configured)."""
    truth = make_true_cov(config.true_cov)
    prior = default_prior(config.true_cov.p)
    root = SeedSpec(config.seed)
    records = []
    for n_index, n in enumerate(config.n_values):
        for rep in range(config.replications):
            data = sample_mvn(truth, n, root.stream(_stream_index(_PURPOSE_DATA, n_index, rep)))
            for est_index, name in enumerate(config.estimators):
                ctx = _make_context(config, truth, prior, n_index, n, rep, est_index)
                start = time.perf_counter()
                record = ReplicationRecord(estimator=name, n=n, replication=rep)
                try:
                    _REGISTRY[name](data, ctx)
                except BandcovError as err:
                    record.failed = True
                    record.message = str(err)
                record.seconds = time.perf_counter() - start
                records.append(record)
    return ExperimentResult(
        "timing", _config_echo(config, truth), _summaries(records, config, "timing"), records
    )
