"""Tests for the one-shot, multi-step and mismatched denoisers."""
import math

import numpy as np
import pytest

from denoised_smoothing.data_model import MixtureModel
from denoised_smoothing.denoisers import (
    DENOISER_KINDS,
    DenoiserSpec,
    ancestral_denoise,
    ancestral_timesteps,
    denoise,
    deterministic_denoise,
    evaluation_count,
    one_shot_denoise,
    posterior_mean,
    sigma_ladder,
)
from denoised_smoothing.errors import DimensionMismatchError, DomainError
from denoised_smoothing.schedule import get_timestep


def spec_for(kind, model, **kwargs):
    return DenoiserSpec(kind, None if kind == 'identity' else model, **kwargs)


class TestDenoiserSpec:

    def test_deterministic_defaults(self, xor_mixture):
        spec = DenoiserSpec('deterministic_multi_step', xor_mixture.model)
        assert spec.steps == 18
        assert spec.order == 1
        assert spec.spacing == 'geometric'
        assert not spec.is_stochastic

    def test_ancestral_is_stochastic(self, xor_mixture):
        assert DenoiserSpec('ancestral_multi_step', xor_mixture.model).is_stochastic

    @pytest.mark.parametrize('kwargs', [
        {'kind': 'tweedie'},
        {'kind': 'one_shot_posterior_mean', 'steps': 4},
        {'kind': 'mismatched_posterior_mean'},
        {'kind': 'one_shot_posterior_mean', 'sigma_train': 0.5},
        {'kind': 'mismatched_posterior_mean', 'sigma_train': -1.0},
        {'kind': 'deterministic_multi_step', 'steps': 0},
        {'kind': 'deterministic_multi_step', 'order': 3},
        {'kind': 'deterministic_multi_step', 'spacing': 'linear'},
    ])
    def test_invalid(self, xor_mixture, kwargs):
        with pytest.raises(DomainError):
            DenoiserSpec(model=xor_mixture.model, **kwargs)

    def test_model_required(self):
        with pytest.raises(DomainError):
            DenoiserSpec('one_shot_posterior_mean')


class TestPosteriorMean:

    def test_single_component_closed_form(self, cosine_schedule):
        mu, tau = 0.3, 0.2
        model = MixtureModel([1.0], [[mu]], tau)
        solution = get_timestep(cosine_schedule, 0.7)
        ab = solution.alpha_bar
        x_t = np.array([[0.1], [-0.4], [2.0]])
        expected = mu + math.sqrt(ab) * tau ** 2 / (ab * tau ** 2 + 1 - ab) * (x_t - math.sqrt(ab) * mu)
        got = posterior_mean(model, x_t, solution, clamp_output=False)
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_output_clamped(self, xor_mixture, cosine_schedule):
        solution = get_timestep(cosine_schedule, 0.1)
        out = posterior_mean(xor_mixture.model, np.full((3, 2), 5.0), solution)
        assert np.all(np.abs(out) <= 1.0)

    def test_dimension_mismatch(self, xor_mixture, cosine_schedule):
        with pytest.raises(DimensionMismatchError):
            posterior_mean(xor_mixture.model, np.zeros(3), get_timestep(cosine_schedule, 0.5))

    @pytest.mark.parametrize('sigma', [0.25, 0.5, 1.0])
    def test_two_components_match_quadrature(self, cosine_schedule, sigma):
        weights, mus, tau = np.array([0.3, 0.7]), np.array([-0.5, 0.4]), 0.2
        model = MixtureModel(weights, mus[:, None], tau)
        solution = get_timestep(cosine_schedule, sigma)
        ab = solution.alpha_bar
        x_t = np.linspace(-1.5, 1.5, 31)

        z, gh = np.polynomial.hermite.hermgauss(200)
        x = (mus[:, None] + math.sqrt(2.0) * tau * z).ravel()
        prior = (weights[:, None] * gh / math.sqrt(math.pi)).ravel()
        lik = np.exp(-(x_t[:, None] - math.sqrt(ab) * x) ** 2 / (2.0 * (1.0 - ab)))
        expected = (lik * prior * x).sum(axis=1) / (lik * prior).sum(axis=1)

        got = posterior_mean(model, x_t[:, None], solution, clamp_output=False)
        np.testing.assert_allclose(got[:, 0], expected, rtol=0, atol=1e-6)

    @pytest.mark.parametrize('sigma', [0.5, 1.0])
    def test_beats_every_linear_shrinkage(self, line_mixture, cosine_schedule, sigma):
        rng = np.random.default_rng(7)
        model = line_mixture.model
        solution = get_timestep(cosine_schedule, sigma)
        sa = math.sqrt(solution.alpha_bar)
        n = 100_000
        component = rng.integers(0, 2, size=n)
        x = model.means[component] + model.tau * rng.standard_normal((n, 1))
        x_t = sa * x + math.sqrt(1.0 - solution.alpha_bar) * rng.standard_normal((n, 1))

        mse = np.mean((posterior_mean(model, x_t, solution, clamp_output=False) - x) ** 2)
        for c in np.linspace(0.0, 1.5 / sa, 50):
            assert mse <= np.mean((c * x_t - x) ** 2)

    def test_symmetric_pair_at_origin(self, line_mixture, cosine_schedule):
        for sigma in (0.25, 0.5, 1.0):
            out = posterior_mean(line_mixture.model, np.zeros((1, 1)),
                                 get_timestep(cosine_schedule, sigma), clamp_output=False)
            assert out[0, 0] == pytest.approx(0.0, abs=1e-12)


class TestOneShot:

    def test_denoises_toward_component(self, line_mixture, cosine_schedule):
        spec = spec_for('one_shot_posterior_mean', line_mixture.model)
        out = one_shot_denoise(spec, np.array([[0.7], [-1.3]]), 0.5, cosine_schedule)
        np.testing.assert_allclose(out, [[0.9], [-0.9]], atol=0.05)

    def test_identity_clamps(self, line_mixture, cosine_schedule):
        spec = spec_for('identity', line_mixture.model)
        out = one_shot_denoise(spec, np.array([[1.7], [-0.2]]), 0.5, cosine_schedule)
        np.testing.assert_array_equal(out, [[1.0], [-0.2]])

    @pytest.mark.parametrize('kind', DENOISER_KINDS)
    def test_zero_noise_returns_clamped_input(self, xor_mixture, cosine_schedule, kind):
        kwargs = {'sigma_train': 0.5} if kind == 'mismatched_posterior_mean' else {}
        spec = spec_for(kind, xor_mixture.model, **kwargs)
        x = np.array([[0.2, -0.3], [1.4, 0.1]])
        out = denoise(spec, x, 0.0, cosine_schedule, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out, np.clip(x, -1, 1))

    def test_matched_mismatch_equals_one_shot(self, xor_mixture, cosine_schedule):
        x = np.random.default_rng(2).normal(size=(20, 2))
        one_shot = spec_for('one_shot_posterior_mean', xor_mixture.model)
        mismatched = spec_for('mismatched_posterior_mean', xor_mixture.model, sigma_train=1.0)
        np.testing.assert_array_equal(
            one_shot_denoise(one_shot, x, 1.0, cosine_schedule),
            one_shot_denoise(mismatched, x, 1.0, cosine_schedule))

    def test_mismatch_changes_output(self, xor_mixture, cosine_schedule):
        x = np.random.default_rng(2).normal(size=(20, 2))
        matched = spec_for('mismatched_posterior_mean', xor_mixture.model, sigma_train=1.0)
        off = spec_for('mismatched_posterior_mean', xor_mixture.model, sigma_train=0.25)
        assert not np.allclose(one_shot_denoise(matched, x, 1.0, cosine_schedule),
                               one_shot_denoise(off, x, 1.0, cosine_schedule))


class TestDeterministic:

    @pytest.mark.parametrize('spacing', ['geometric', 'karras'])
    def test_ladder(self, xor_mixture, spacing):
        spec = DenoiserSpec('deterministic_multi_step', xor_mixture.model, steps=10, spacing=spacing)
        ladder = sigma_ladder(spec, 2.0)
        assert len(ladder) == 11
        assert ladder[0] == 2.0
        assert ladder[-2] == pytest.approx(0.02)
        assert ladder[-1] == 0.0
        assert np.all(np.diff(ladder) < 0)

    def test_single_step_equals_one_shot(self, xor_mixture, cosine_schedule):
        x = np.random.default_rng(3).normal(scale=1.2, size=(50, 2))
        det = DenoiserSpec('deterministic_multi_step', xor_mixture.model, steps=1)
        one_shot = spec_for('one_shot_posterior_mean', xor_mixture.model)
        np.testing.assert_allclose(deterministic_denoise(det, x, 1.0, cosine_schedule),
                                   one_shot_denoise(one_shot, x, 1.0, cosine_schedule), atol=1e-10)

    @pytest.mark.parametrize('order', [1, 2])
    def test_reproducible_and_in_cube(self, xor_mixture, cosine_schedule, order):
        x = np.random.default_rng(4).normal(scale=2.0, size=(30, 2))
        spec = DenoiserSpec('deterministic_multi_step', xor_mixture.model, order=order)
        a = deterministic_denoise(spec, x, 2.0, cosine_schedule)
        b = deterministic_denoise(spec, x, 2.0, cosine_schedule)
        np.testing.assert_array_equal(a, b)
        assert np.all(np.abs(a) <= 1.0)


class TestAncestral:

    def test_timesteps(self):
        np.testing.assert_array_equal(ancestral_timesteps(4, None), [4, 3, 2, 1, 0])
        np.testing.assert_array_equal(ancestral_timesteps(10, 1), [10, 0])
        steps = ancestral_timesteps(100, 5)
        assert steps[0] == 100 and steps[-1] == 0 and len(steps) == 6
        assert np.all(np.diff(steps) < 0)

    def test_single_step_equals_one_shot(self, xor_mixture, cosine_schedule):
        x = np.random.default_rng(5).normal(scale=1.2, size=(50, 2))
        spec = DenoiserSpec('ancestral_multi_step', xor_mixture.model, steps=1)
        one_shot = spec_for('one_shot_posterior_mean', xor_mixture.model)
        np.testing.assert_allclose(
            ancestral_denoise(spec, x, 1.0, cosine_schedule, np.random.default_rng(0)),
            one_shot_denoise(one_shot, x, 1.0, cosine_schedule), atol=1e-10)

    def test_reproducible_under_seed(self, xor_mixture, cosine_schedule):
        x = np.random.default_rng(6).normal(size=(10, 2))
        spec = DenoiserSpec('ancestral_multi_step', xor_mixture.model, steps=20)
        a = denoise(spec, x, 1.0, cosine_schedule, rng=np.random.default_rng(7))
        b = denoise(spec, x, 1.0, cosine_schedule, rng=np.random.default_rng(7))
        c = denoise(spec, x, 1.0, cosine_schedule, rng=np.random.default_rng(8))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.all(np.abs(a) <= 1.0)

    def test_needs_random_stream(self, xor_mixture, cosine_schedule):
        spec = DenoiserSpec('ancestral_multi_step', xor_mixture.model)
        with pytest.raises(DomainError):
            denoise(spec, np.zeros(2), 1.0, cosine_schedule)


class TestEvaluationCount:

    def test_counts(self, xor_mixture, cosine_schedule):
        model = xor_mixture.model
        t_star = get_timestep(cosine_schedule, 1.0).t_discrete
        assert evaluation_count(spec_for('identity', model), cosine_schedule, 1.0) == 0
        assert evaluation_count(spec_for('one_shot_posterior_mean', model), cosine_schedule, 1.0) == 1
        assert evaluation_count(DenoiserSpec('deterministic_multi_step', model),
                                cosine_schedule, 1.0) == 18
        assert evaluation_count(DenoiserSpec('deterministic_multi_step', model, order=2),
                                cosine_schedule, 1.0) == 35
        assert evaluation_count(DenoiserSpec('ancestral_multi_step', model),
                                cosine_schedule, 1.0) == t_star
        assert evaluation_count(spec_for('one_shot_posterior_mean', model), cosine_schedule, 0.0) == 0
