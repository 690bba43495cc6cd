import json

import numpy as np
import pytest

from bandcov import SeedSpec, band_mask, conditional_mean, sample_mvn
from bandcov.cli import (
    PredictionTask,
    cli_dispatch,
    posterior_predict_tail,
    predict_tail,
    prediction_mse,
    transform_counts,
)
from bandcov.io import read_matrix, write_matrix
from bandcov.simulate import TrueCovSpec, make_true_cov
from conftest import random_spd


class TestTransformCounts:
    def test_zero_count_maps_to_half_before_centering(self):
        raw = np.array([[0, 0], [0, 0]])
        out = transform_counts(raw)
        # centering removes the constant, so reconstruct the pre-centered value
        assert np.sqrt(0 + 0.25) == 0.5
        assert np.allclose(out, 0.0)

    def test_count_four(self):
        raw = np.array([[4, 0], [0, 4]])
        out = transform_counts(raw, train_rows=2)
        expected = np.sqrt(np.array([[4.25, 0.25], [0.25, 4.25]]))
        assert np.allclose(out, expected - expected.mean(axis=0), atol=1e-12)

    def test_training_columns_centered(self, rng):
        raw = rng.poisson(5.0, size=(20, 6))
        out = transform_counts(raw, train_rows=12)
        assert np.abs(out[:12].mean(axis=0)).max() < 1e-12

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            transform_counts(np.array([[1, -1]]))

    def test_fractional_counts_rejected(self):
        with pytest.raises(ValueError):
            transform_counts(np.array([[1.5, 2.0]]))


class TestPredictTail:
    def test_identity_covariance_predicts_zero(self):
        out = predict_tail(np.eye(5), 3, np.array([1.0, -2.0, 0.5]))
        assert np.allclose(out, 0.0)

    def test_reduces_to_conditional_mean(self, rng):
        sigma = random_spd(rng, 4)
        x = rng.standard_normal(3)
        tail = predict_tail(sigma, 3, x)
        assert tail.shape == (1,)
        assert tail[0] == pytest.approx(conditional_mean(sigma, x), rel=1e-12)

    def test_batch_rows(self, rng):
        sigma = random_spd(rng, 6)
        rows = rng.standard_normal((4, 4))
        out = predict_tail(sigma, 4, rows)
        assert out.shape == (4, 2)
        single = predict_tail(sigma, 4, rows[2])
        assert np.allclose(out[2], single)

    def test_split_validation(self):
        with pytest.raises(ValueError):
            predict_tail(np.eye(3), 3, np.zeros(3))
        with pytest.raises(ValueError):
            PredictionTask(split_index=0, train_rows=5, test_rows=2)


class TestPredictionMse:
    def test_perfect_prediction(self):
        x = np.ones((3, 4))
        assert prediction_mse(x, x) == 0.0

    def test_unit_error_single_coordinate(self):
        predicted = np.zeros((5, 3))
        observed = np.zeros((5, 3))
        observed[:, 1] = 1.0
        assert prediction_mse(predicted, observed) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            prediction_mse(np.zeros((2, 2)), np.zeros((3, 2)))


class TestPosteriorPredictTail:
    def test_bands_bracket_mean(self, rng):
        draws = np.stack([random_spd(rng, 5) for _ in range(60)])
        x = rng.standard_normal((3, 3))
        mean, lower, upper = posterior_predict_tail(draws, 3, x, level=0.9)
        assert mean.shape == lower.shape == upper.shape == (3, 2)
        assert np.all(lower <= upper)


def _write_data(tmp_path, rows=12, cols=3, seed=17):
    truth = make_true_cov(TrueCovSpec("sigma1", p=cols, k0=1))
    data = sample_mvn(truth, rows, SeedSpec(seed))
    path = tmp_path / "data.csv"
    write_matrix(path, data)
    return path


class TestCliFit:
    def test_smoke_contract(self, tmp_path):
        data_path = _write_data(tmp_path)
        out = tmp_path / "fit"
        status = cli_dispatch(
            [
                "fit", "--data", str(data_path), "--method", "ppp", "--bandwidth", "1",
                "--eps", "0.2", "--samples", "50", "--seed", "3", "--out", str(out),
            ]
        )
        assert status == 0
        estimate = read_matrix(out / "estimate.csv")
        assert estimate.shape == (3, 3)
        assert np.all(estimate[~band_mask(3, 1)] == 0.0)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["method"] == "ppp"
        assert manifest["bandwidth"] == 1
        assert manifest["eps"] == 0.2
        assert manifest["n"] == 12 and manifest["p"] == 3
        assert manifest["prior"] == {"scale": "identity", "nu": 9}
        assert set(manifest["timestamps"]) == {"started", "finished"}

    def test_round_trip_matrix_bitwise(self, tmp_path, rng):
        matrix = rng.standard_normal((4, 4))
        path = tmp_path / "m.csv"
        write_matrix(path, matrix)
        assert np.array_equal(read_matrix(path), matrix)

    def test_reproducible_given_seed(self, tmp_path):
        data_path = _write_data(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli_dispatch(
                [
                    "fit", "--data", str(data_path), "--method", "ppp", "--bandwidth",
                    "1", "--eps", "cv", "--samples", "40", "--seed", "9", "--out", str(out),
                ]
            ) == 0
            outs.append(read_matrix(out / "estimate.csv"))
        assert np.array_equal(outs[0], outs[1])

    def test_save_samples_round_trip(self, tmp_path):
        from bandcov import load_sample_set

        data_path = _write_data(tmp_path)
        out = tmp_path / "fit"
        assert cli_dispatch(
            [
                "fit", "--data", str(data_path), "--method", "ppp", "--bandwidth", "1",
                "--eps", "0.3", "--samples", "20", "--seed", "3", "--save-samples",
                "--out", str(out),
            ]
        ) == 0
        samples = load_sample_set(out / "samples")
        assert samples.count == 20
        assert samples.processing.kind == "banding"

    def test_frequentist_methods(self, tmp_path):
        data_path = _write_data(tmp_path, rows=20)
        for method in ("banded-sample", "dual-mle", "mle-icf"):
            out = tmp_path / method
            status = cli_dispatch(
                [
                    "fit", "--data", str(data_path), "--method", method, "--bandwidth",
                    "1", "--eps", "0.1", "--out", str(out),
                ]
            )
            assert status == 0
            assert read_matrix(out / "estimate.csv").shape == (3, 3)

    def test_unknown_flag_exits_2(self, tmp_path):
        assert cli_dispatch(["fit", "--nonsense", "x"]) == 2

    def test_missing_data_file_exits_2(self, tmp_path):
        assert cli_dispatch(
            ["fit", "--data", str(tmp_path / "nope.csv"), "--method", "ppp",
             "--bandwidth", "1", "--out", str(tmp_path / "o")]
        ) == 2

    def test_numeric_failure_exits_3(self, tmp_path, rng):
        # one coordinate scaled enormously makes the ridged second-moment
        # matrix numerically singular, which the solver refuses
        data = rng.standard_normal((8, 3))
        data[:, 0] *= 1e9
        path = tmp_path / "bad.csv"
        write_matrix(path, data)
        status = cli_dispatch(
            ["fit", "--data", str(path), "--method", "dual-mle", "--bandwidth", "1",
             "--eps", "1e-8", "--out", str(tmp_path / "o")]
        )
        assert status == 3


class TestCliPredict:
    def test_split_too_large_exits_2(self, tmp_path):
        data_path = _write_data(tmp_path)
        assert cli_dispatch(
            ["predict", "--data", str(data_path), "--split", "3", "--out", str(tmp_path / "o")]
        ) == 2

    def test_predict_report_and_intervals(self, tmp_path):
        truth = make_true_cov(TrueCovSpec("sigma2", p=6, k0=2))
        data = sample_mvn(truth, 40, SeedSpec(23))
        path = tmp_path / "data.csv"
        write_matrix(path, data)
        out = tmp_path / "pred"
        status = cli_dispatch(
            [
                "predict", "--data", str(path), "--split", "4", "--method", "ppp",
                "--bandwidth", "2", "--eps", "0.2", "--samples", "60", "--seed", "4",
                "--train-rows", "30", "--out", str(out),
            ]
        )
        assert status == 0
        report = json.loads((out / "report.json").read_text())
        assert report["mse"] > 0
        assert report["train_rows"] == 30 and report["test_rows"] == 10
        assert 0.0 <= report["interval_coverage"] <= 1.0
        predictions = read_matrix(out / "predictions.csv")
        assert predictions.shape == (10, 2)
        lower = read_matrix(out / "interval_lower.csv")
        upper = read_matrix(out / "interval_upper.csv")
        assert np.all(lower <= upper)

    def test_predict_from_saved_samples(self, tmp_path):
        data_path = _write_data(tmp_path, rows=25)
        fit_out = tmp_path / "fit"
        assert cli_dispatch(
            [
                "fit", "--data", str(data_path), "--method", "ppp", "--bandwidth", "1",
                "--eps", "0.3", "--samples", "30", "--seed", "6", "--save-samples",
                "--out", str(fit_out),
            ]
        ) == 0
        out = tmp_path / "pred"
        status = cli_dispatch(
            [
                "predict", "--data", str(data_path), "--split", "2",
                "--from-samples", str(fit_out / "samples"), "--train-rows", "20",
                "--out", str(out),
            ]
        )
        assert status == 0
        report = json.loads((out / "report.json").read_text())
        assert "interval_coverage" in report


class TestCliCvAndSimulate:
    def test_cv_epsilon_report(self, tmp_path):
        data_path = _write_data(tmp_path, rows=15)
        out = tmp_path / "report.json"
        status = cli_dispatch(
            [
                "cv", "--data", str(data_path), "--bandwidth", "1",
                "--grid-eps", "0.05,0.2,0.8", "--samples", "40", "--seed", "2",
                "--out", str(out),
            ]
        )
        assert status == 0
        payload = json.loads(out.read_text())
        assert payload["policy"] == "maximize-log-predictive"
        assert payload["selected"] in payload["candidates"]

    def test_cv_bandwidth_report(self, tmp_path):
        data_path = _write_data(tmp_path, rows=15)
        out = tmp_path / "report.json"
        status = cli_dispatch(
            [
                "cv", "--data", str(data_path), "--grid-k", "0,1,2",
                "--grid-eps", "0.1,0.4", "--samples", "40", "--seed", "2",
                "--out", str(out),
            ]
        )
        assert status == 0
        payload = json.loads(out.read_text())
        assert payload["selected"] in [0, 1, 2]

    def test_simulate_smoke(self, tmp_path):
        config = {
            "experiment": "point",
            "true_cov": {"kind": "sigma1", "p": 8, "k0": 1},
            "n_values": [12],
            "replications": 2,
            "estimators": ["ppp", "oracle"],
            "posterior_draws": 30,
            "bandwidth_policy": "known",
            "eps_policy": 0.2,
            "seed": 7,
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        out = tmp_path / "sim"
        assert cli_dispatch(["simulate", "--config", str(config_path), "--out", str(out)]) == 0
        results = json.loads((out / "results.json").read_text())
        assert results["mode"] == "point"
        table = (out / "table.csv").read_text().splitlines()
        assert table[0] == "estimator,error n=12"
        assert len(table) == 3

    def test_bad_config_exits_2(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({"experiment": "point", "unknown": 1}))
        assert cli_dispatch(["simulate", "--config", str(config_path), "--out", str(tmp_path / "s")]) == 2
