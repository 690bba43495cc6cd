"""Command-line entry points and the count-data prediction workflow.

Subcommands:

* ``simulate`` runs a Monte Carlo experiment from a JSON config.
* ``fit`` estimates a banded covariance from a data CSV.
* ``predict`` fits on leading rows/coordinates and predicts the trailing
  coordinates of held-out rows, with credible bands for Bayesian methods.
* ``cv`` reports cross-validation scores over tuning grids.

Exit status: 0 success, 2 configuration/usage error, 3 numeric or
convergence failure.
"""

import argparse
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._linalg import cholesky
from .crossval import CVGrid, select_bandwidth, select_epsilon, select_frequentist_tuning
from .errors import BandcovError
from .estimators import banded_sample_cov, dual_mle, mle_icf, ridge_adjusted_cov, sample_cov
from .inference import quantile_credible_interval
from .io import read_matrix, write_json, write_matrix
from .posterior import (
    banding_post_process,
    conjugate_update,
    draw_initial_samples,
    dual_post_process,
    load_sample_set,
    posterior_mean,
    save_sample_set,
)
from .sampling import SeedSpec
from .simulate import (
    ExperimentConfig,
    default_prior,
    run_interval_experiment,
    run_point_estimation,
    timing_summary,
)
from scipy.linalg import solve_triangular

__all__ = [
    "PredictionTask",
    "transform_counts",
    "predict_tail",
    "posterior_predict_tail",
    "prediction_mse",
    "cli_dispatch",
    "main",
]

FIT_METHODS = ("ppp", "dual-ppp", "banded-sample", "dual-mle", "mle-icf")


@dataclass(frozen=True)
class PredictionTask:
    """Coordinate split for tail prediction: observe 1..m, predict m+1..p."""

    split_index: int
    train_rows: int
    test_rows: int

    def __post_init__(self):
        if self.split_index < 1:
            raise ValueError(f"split index must be >= 1, got {self.split_index}")
        if self.train_rows < 1 or self.test_rows < 0:
            raise ValueError("need at least one training row and nonnegative test rows")


def transform_counts(raw, train_rows=None):
    """Variance-stabilize count data and center columns by training means.

    Entrywise ``sqrt(count + 1/4)``, then subtract column means computed on
    the first ``train_rows`` rows only (all rows when not given).
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if np.any(raw < 0):
        raise ValueError("counts must be nonnegative")
    if np.any(raw != np.round(raw)):
        raise ValueError("counts must be integers")
    x = np.sqrt(raw + 0.25)
    limit = raw.shape[0] if train_rows is None else int(train_rows)
    if not 1 <= limit <= raw.shape[0]:
        raise ValueError(f"train_rows must be in [1, {raw.shape[0]}], got {train_rows}")
    return x - x[:limit].mean(axis=0)


def _split_blocks(sigma, m):
    p = sigma.shape[0]
    if not 1 <= m < p:
        raise ValueError(f"split index must be in [1, p-1] = [1, {p - 1}], got {m}")
    return sigma[:m, :m], sigma[m:, :m]


def predict_tail(sigma_hat, task, x_obs):
    """Conditional mean of the trailing block given the observed head.

    ``task`` may be a :class:`PredictionTask` or a plain split index.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    m = task.split_index if isinstance(task, PredictionTask) else int(task)
    head_block, cross_block = _split_blocks(sigma_hat, m)
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.shape[-1] != m:
        raise ValueError(f"observed vector must have length {m}, got {x_obs.shape[-1]}")
    lower = cholesky(head_block, "observed block")
    y = solve_triangular(lower, x_obs.T, lower=True)
    w = solve_triangular(lower.T, y, lower=False)
    return (cross_block @ w).T


def posterior_predict_tail(sample_set, task, x_obs, level=0.95):
    """Per-draw tail predictions summarized as pointwise quantile bands.

    Returns (mean prediction, lower band, upper band), each with one row
    per observed vector and one column per predicted coordinate.
    """
    x_obs = np.atleast_2d(np.asarray(x_obs, dtype=float))
    per_draw = np.stack([predict_tail(draw, task, x_obs) for draw in sample_set])
    alpha = 1.0 - level
    lower = np.quantile(per_draw, alpha / 2.0, axis=0)
    upper = np.quantile(per_draw, 1.0 - alpha / 2.0, axis=0)
    return per_draw.mean(axis=0), lower, upper


def prediction_mse(predicted, observed):
    """Mean over rows of the squared Euclidean prediction error."""
    predicted = np.atleast_2d(np.asarray(predicted, dtype=float))
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    if predicted.shape != observed.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {observed.shape}")
    return float(np.mean(np.sum((observed - predicted) ** 2, axis=1)))


def _utc_now():
    return datetime.now(timezone.utc).isoformat()


def _parse_eps(text):
    if text == "cv":
        return "cv"
    value = float(text)
    if value <= 0:
        raise ValueError(f"eps must be positive, got {value}")
    return value


def _parse_bandwidth(text):
    if text == "cv":
        return "cv"
    return int(text)


def _parse_grid(text, cast):
    return tuple(cast(tok) for tok in text.split(",") if tok.strip() != "")


def _fit_estimate(data, method, bandwidth, eps, draws, seed):
    """Shared fit path for ``fit`` and ``predict``.

    Returns (estimate, sample_set_or_None, resolved bandwidth, resolved eps).
    """
    n, p = data.shape
    prior = default_prior(p)
    eps_grid = tuple(np.geomspace(1e-3, 1.0, 10))
    k_grid = tuple(range(min(20, p - 1) + 1))
    if method in ("ppp", "dual-ppp"):
        post = conjugate_update(prior, data)
        samples = draw_initial_samples(post, draws, SeedSpec(seed))
        if bandwidth == "cv":
            policy = eps if method == "ppp" else "theory"
            report = select_bandwidth(samples, data, CVGrid(eps_grid, k_grid), prior, eps_policy=policy)
            k = int(report.selected)
            resolved_eps = report.details["eps_by_bandwidth"][k]
        else:
            k = int(bandwidth)
            resolved_eps = None
        if method == "ppp":
            if resolved_eps is None:
                if eps == "cv":
                    resolved_eps = float(
                        select_epsilon(samples, data, k, CVGrid(eps_grid, (k,)), prior).selected
                    )
                else:
                    resolved_eps = float(eps)
            processed = banding_post_process(samples, k, float(resolved_eps))
            return posterior_mean(processed), processed, k, float(resolved_eps)
        processed = dual_post_process(samples, k)
        return posterior_mean(processed), processed, k, None
    if bandwidth == "cv":
        raise ValueError("bandwidth cross-validation for frequentist methods is available via the harness; pass an integer bandwidth")
    k = int(bandwidth)
    if method == "banded-sample":
        return banded_sample_cov(data, k), None, k, None
    ridge = 1e-3 if eps == "cv" else float(eps)
    if eps == "cv":
        fitter = dual_mle if method == "dual-mle" else mle_icf
        handle = lambda rows, e: fitter(ridge_adjusted_cov(rows, e), k)
        ridge = float(select_frequentist_tuning(handle, data, eps_grid).selected)
    adjusted = ridge_adjusted_cov(data, ridge)
    estimate = dual_mle(adjusted, k) if method == "dual-mle" else mle_icf(adjusted, k)
    return estimate, None, k, ridge


def _manifest(method, bandwidth, eps, seed, n, p, started):
    return {
        "method": method,
        "bandwidth": bandwidth,
        "eps": eps,
        "seed": seed,
        "n": n,
        "p": p,
        "prior": {"scale": "identity", "nu": 2 * p + 3},
        "timestamps": {"started": started, "finished": _utc_now()},
    }


def _cmd_fit(args):
    started = _utc_now()
    data = read_matrix(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    estimate, samples, k, eps = _fit_estimate(
        data, args.method, args.bandwidth, args.eps, args.samples, args.seed
    )
    write_matrix(out / "estimate.csv", estimate)
    if args.save_samples and samples is not None:
        save_sample_set(samples, out / "samples")
    write_json(
        out / "manifest.json",
        _manifest(args.method, k, eps, args.seed, data.shape[0], data.shape[1], started),
    )
    return 0


def _cmd_predict(args):
    started = _utc_now()
    raw = read_matrix(args.data)
    n, p = raw.shape
    m = int(args.split)
    if not 1 <= m < p:
        raise ValueError(f"split must be in [1, p-1] = [1, {p - 1}], got {m}")
    train_rows = int(args.train_rows) if args.train_rows is not None else int(round(0.85 * n))
    if not 1 <= train_rows < n:
        raise ValueError(f"train-rows must be in [1, n-1] = [1, {n - 1}], got {train_rows}")
    data = transform_counts(raw, train_rows) if args.counts else raw - raw[:train_rows].mean(axis=0)
    task = PredictionTask(m, train_rows, n - train_rows)
    train, test = data[:train_rows], data[train_rows:]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = None
    if args.from_samples:
        samples = load_sample_set(args.from_samples)
        estimate = posterior_mean(samples)
        k, eps = samples.processing.k, samples.processing.eps
        method = f"samples:{samples.processing.kind}"
    else:
        method = args.method
        if method == "sample":
            estimate, k, eps = sample_cov(train), None, None
        else:
            estimate, samples, k, eps = _fit_estimate(
                train, method, args.bandwidth, args.eps, args.samples, args.seed
            )
    predictions = predict_tail(estimate, task, test[:, :m])
    write_matrix(out / "predictions.csv", predictions)
    report = {
        "mse": prediction_mse(predictions, test[:, m:]),
        "split_index": m,
        "train_rows": train_rows,
        "test_rows": n - train_rows,
        "level": args.level,
    }
    if samples is not None:
        _, lower, upper = posterior_predict_tail(samples, task, test[:, :m], args.level)
        write_matrix(out / "interval_lower.csv", lower)
        write_matrix(out / "interval_upper.csv", upper)
        held_out = test[:, m:]
        inside = (held_out >= lower) & (held_out <= upper)
        report["interval_coverage"] = float(inside.mean())
    write_json(out / "report.json", report)
    write_json(
        out / "manifest.json",
        _manifest(method, k, eps, args.seed, n, p, started),
    )
    return 0


def _cmd_cv(args):
    data = read_matrix(args.data)
    n, p = data.shape
    prior = default_prior(p)
    post = conjugate_update(prior, data)
    samples = draw_initial_samples(post, args.samples, SeedSpec(args.seed))
    eps_grid = _parse_grid(args.grid_eps, float) if args.grid_eps else tuple(np.geomspace(1e-3, 1.0, 10))
    if args.grid_k:
        k_grid = _parse_grid(args.grid_k, int)
        report = select_bandwidth(samples, data, CVGrid(eps_grid, k_grid), prior, eps_policy="cv")
    else:
        if args.bandwidth is None:
            raise ValueError("pass --bandwidth when cross-validating eps only")
        k = int(args.bandwidth)
        report = select_epsilon(samples, data, k, CVGrid(eps_grid, (k,)), prior)
    payload = report.to_json()
    details = payload.get("details", {})
    if "eps_by_bandwidth" in details:
        details["eps_by_bandwidth"] = {str(k): v for k, v in details["eps_by_bandwidth"].items()}
    write_json(args.out, payload)
    return 0


def _cmd_simulate(args):
    from .io import read_json

    payload = read_json(args.config)
    mode = payload.pop("experiment", "point")
    config = ExperimentConfig.from_json(payload)
    if mode == "point":
        result = run_point_estimation(config)
    elif mode == "interval":
        result = run_interval_experiment(config)
    elif mode == "timing":
        result = timing_summary(config)
    else:
        raise ValueError(f"unknown experiment mode {mode!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "results.json", result.to_json())
    result.write_table(out / "table.csv")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="bandcov", description="banded covariance estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment from a JSON config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit a banded covariance estimate to a data CSV")
    fit.add_argument("--data", required=True)
    fit.add_argument("--method", required=True, choices=FIT_METHODS)
    fit.add_argument("--bandwidth", required=True, type=_parse_bandwidth, help="integer or 'cv'")
    fit.add_argument("--eps", type=_parse_eps, default="cv", help="positive float or 'cv'")
    fit.add_argument("--samples", type=int, default=500)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--save-samples", action="store_true")
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=_cmd_fit)

    pred = sub.add_parser("predict", help="predict trailing coordinates of held-out rows")
    pred.add_argument("--data", required=True)
    pred.add_argument("--split", required=True, type=int, help="observed coordinates 1..split")
    pred.add_argument("--method", default="ppp", choices=FIT_METHODS + ("sample",))
    pred.add_argument("--bandwidth", type=_parse_bandwidth, default="cv")
    pred.add_argument("--eps", type=_parse_eps, default="cv")
    pred.add_argument("--samples", type=int, default=500)
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--train-rows", type=int, default=None)
    pred.add_argument("--counts", action="store_true", help="input is raw counts; stabilize and center")
    pred.add_argument("--level", type=float, default=0.95)
    pred.add_argument("--from-samples", default=None, help="directory of saved posterior samples")
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=_cmd_predict)

    cv = sub.add_parser("cv", help="cross-validation scores over tuning grids")
    cv.add_argument("--data", required=True)
    cv.add_argument("--grid-eps", default=None, help="comma-separated floors")
    cv.add_argument("--grid-k", default=None, help="comma-separated bandwidths")
    cv.add_argument("--bandwidth", type=int, default=None)
    cv.add_argument("--samples", type=int, default=500)
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=_cmd_cv)

    return parser


def cli_dispatch(argv):
    """Run one CLI invocation; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_code:
        return 0 if exit_code.code in (0, None) else 2
    try:
        return args.func(args) or 0
    except (ValueError, TypeError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except BandcovError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))
