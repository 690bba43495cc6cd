import numpy as np
import pytest

from bandcov import (
    InvalidStateError,
    SeedSpec,
    band_mask,
    banding_post_process,
    class_membership,
    conjugate_update,
    default_prior,
    draw_initial_samples,
    dual_post_process,
    load_sample_set,
    pd_band_adjust,
    posterior_mean,
    sample_mvn,
    save_sample_set,
)
from bandcov.bandmat import ClassBounds
from bandcov.posterior import PosteriorSampleSet, PostProcessing, default_epsilon
from bandcov.sampling import IWParams
from conftest import random_spd


@pytest.fixture
def small_samples():
    prior = default_prior(4)
    data = sample_mvn(np.eye(4), 12, SeedSpec(51))
    post = conjugate_update(prior, data)
    return draw_initial_samples(post, 30, SeedSpec(52)), data, prior


class TestConjugateUpdate:
    def test_zero_data_shifts_df_only(self):
        prior = default_prior(3)
        data = np.zeros((7, 3))
        post = conjugate_update(prior, data)
        assert np.array_equal(post.scale, np.eye(3))
        assert post.df == prior.df + 7

    def test_single_unit_row(self):
        prior = default_prior(2)
        post = conjugate_update(prior, np.array([[1.0, 0.0]]))
        assert np.array_equal(post.scale, np.eye(2) + np.outer([1, 0], [1, 0]))
        assert post.df == prior.df + 1

    def test_posterior_mean_approaches_sample_cov(self):
        p = 4
        prior = default_prior(p)
        data = sample_mvn(random_spd(np.random.default_rng(3), p), 4000, SeedSpec(53))
        gaps = []
        for n in (100, 500, 4000):
            subset = data[:n]
            post = conjugate_update(prior, subset)
            s_n = subset.T @ subset / n
            gaps.append(np.abs(post.mean() - s_n).max())
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 5e-3


class TestDrawInitialSamples:
    def test_mean_matches_posterior_mean(self):
        p = 3
        post = IWParams(4.0 * np.eye(p), 2 * p + 7)  # mean = 4I/5
        samples = draw_initial_samples(post, 4000, SeedSpec(54))
        assert np.abs(samples.draws.mean(axis=0) - post.mean()).max() < 0.06

    def test_reproducible(self):
        post = IWParams(np.eye(3), 11)
        a = draw_initial_samples(post, 5, SeedSpec(55))
        b = draw_initial_samples(post, 5, SeedSpec(55))
        assert np.array_equal(a.draws, b.draws)

    def test_draws_read_only(self, small_samples):
        samples, _, _ = small_samples
        with pytest.raises(ValueError):
            samples.draws[0, 0, 0] = 1.0


class TestBandingPostProcess:
    def test_already_banded_draws_unchanged(self):
        post = IWParams(np.eye(3), 12)
        diag_draws = np.stack([np.diag([1.0, 2.0, 3.0]), np.diag([2.0, 1.0, 0.5])])
        samples = PosteriorSampleSet(diag_draws, post, SeedSpec(0))
        out = banding_post_process(samples, 0, 0.25)
        assert np.array_equal(out.draws, diag_draws)

    def test_contract_floor_and_band(self, small_samples):
        samples, _, _ = small_samples
        eps = 0.3
        out = banding_post_process(samples, 1, eps)
        for draw in out.draws:
            lam_max = np.linalg.eigvalsh(draw)[-1]
            assert class_membership(draw, 1, ClassBounds(upper=lam_max + 1, lower=eps - 1e-8))

    def test_matches_elementwise_adjustment(self, small_samples):
        samples, _, _ = small_samples
        out = banding_post_process(samples, 2, 0.4)
        for original, processed in zip(samples.draws, out.draws):
            assert np.allclose(processed, pd_band_adjust(original, 2, 0.4), atol=1e-12)

    def test_double_processing_rejected(self, small_samples):
        samples, _, _ = small_samples
        once = banding_post_process(samples, 1, 0.2)
        with pytest.raises(InvalidStateError):
            banding_post_process(once, 1, 0.2)

    def test_commutes_with_subsampling(self, small_samples):
        samples, _, _ = small_samples
        head_then_process = banding_post_process(samples.head(10), 1, 0.2)
        process_then_head = banding_post_process(samples, 1, 0.2).head(10)
        assert np.array_equal(head_then_process.draws, process_then_head.draws)

    def test_descriptor(self, small_samples):
        samples, _, _ = small_samples
        out = banding_post_process(samples, 2, 0.15)
        assert out.processing == PostProcessing("banding", k=2, eps=0.15)


class TestDualPostProcess:
    def test_banded_draws_fixed_point(self):
        post = IWParams(np.eye(3), 12)
        rng = np.random.default_rng(8)
        draws = np.stack([pd_band_adjust(random_spd(rng, 3), 1, 0.5) for _ in range(4)])
        samples = PosteriorSampleSet(draws, post, SeedSpec(0))
        out = dual_post_process(samples, 1)
        assert np.allclose(out.draws, draws, atol=1e-12)

    def test_diagonal_case_closed_form(self, small_samples):
        samples, _, _ = small_samples
        out = dual_post_process(samples, 0)
        for original, processed in zip(samples.draws, out.draws):
            expected = np.diag(1.0 / np.diag(np.linalg.inv(original)))
            assert np.allclose(processed, expected, atol=1e-8)

    def test_inverse_matches_on_band(self, small_samples):
        samples, _, _ = small_samples
        k = 1
        out = dual_post_process(samples, k)
        mask = band_mask(4, k)
        for original, processed in zip(samples.draws, out.draws):
            residual = np.abs((np.linalg.inv(processed) - np.linalg.inv(original))[mask]).max()
            assert residual < 1e-7
            assert np.all(processed[~mask] == 0.0)

    def test_double_processing_rejected(self, small_samples):
        samples, _, _ = small_samples
        once = dual_post_process(samples, 1)
        with pytest.raises(InvalidStateError):
            dual_post_process(once, 1)


class TestBandedLossImprovement:
    def test_banding_lowers_posterior_loss_for_banded_truth(self):
        # banding the draws moves them toward a banded truth, so the Monte
        # Carlo posterior-expected spectral distance drops (one replication
        # at the benchmark scale)
        from bandcov import posterior_spectral_loss
        from bandcov.simulate import TrueCovSpec, make_true_cov

        p, n, k = 100, 100, 5
        truth = make_true_cov(TrueCovSpec("sigma1", p=p, k0=k))
        data = sample_mvn(truth, n, SeedSpec(57))
        post = conjugate_update(default_prior(p), data)
        samples = draw_initial_samples(post, 500, SeedSpec(58))
        processed = banding_post_process(samples, k, 0.05)
        raw_loss = posterior_spectral_loss(samples, truth)
        banded_loss = posterior_spectral_loss(processed, truth)
        assert banded_loss < raw_loss


class TestPosteriorMean:
    def test_singleton(self):
        post = IWParams(np.eye(2), 9)
        draw = random_spd(np.random.default_rng(1), 2)
        samples = PosteriorSampleSet(draw[None], post, SeedSpec(0))
        assert np.array_equal(posterior_mean(samples), draw)

    def test_average_of_two(self):
        post = IWParams(np.eye(2), 9)
        samples = PosteriorSampleSet(np.stack([np.eye(2), 3.0 * np.eye(2)]), post, SeedSpec(0))
        assert np.array_equal(posterior_mean(samples), 2.0 * np.eye(2))

    def test_banded_mean_of_banded_draws(self, small_samples):
        samples, _, _ = small_samples
        out = banding_post_process(samples, 1, 0.2)
        mean = posterior_mean(out)
        assert np.all(mean[~band_mask(4, 1)] == 0.0)


class TestDefaultEpsilon:
    def test_decreases_in_n(self):
        values = [default_epsilon(5, 100, n) for n in (50, 200, 800)]
        assert values[0] > values[1] > values[2]

    def test_formula(self):
        assert default_epsilon(5, 100, 100) == pytest.approx(
            np.sqrt(np.log(5.0) ** 2 * (5 + np.log(100.0)) / 100.0)
        )


class TestSerialization:
    def test_round_trip(self, small_samples, tmp_path):
        samples, _, _ = small_samples
        processed = banding_post_process(samples, 1, 0.2)
        save_sample_set(processed, tmp_path / "set")
        loaded = load_sample_set(tmp_path / "set")
        assert np.array_equal(loaded.draws, processed.draws)
        assert loaded.processing == processed.processing
        assert loaded.seed == processed.seed
        assert loaded.params.df == processed.params.df
        assert np.array_equal(loaded.params.scale, processed.params.scale)
