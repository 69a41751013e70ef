"""Tests for the exact low-dimensional oracle and the soundness search."""
import numpy as np
import pytest
from scipy.special import ndtr

from denoised_smoothing.data_model import LabeledMixture, MixtureModel, Point, sample_points
from denoised_smoothing.errors import DimensionMismatchError, DomainError, UnsupportedDenoiserError
from denoised_smoothing.oracle import (
    QuadratureGrid,
    bound_validity_trials,
    exact_certified_radius,
    exact_class_probabilities,
    exact_class_probabilities_many,
    exact_smoothed_label,
    quadrature_change,
    soundness_search,
)
from denoised_smoothing.pipeline import substream
from denoised_smoothing.schedule import get_timestep
from denoised_smoothing.stats import CertifyParams

SEARCH = dict(directions=64, ascent_steps=8, starts=2)


@pytest.fixture
def skewed_line_mixture():
    model = MixtureModel([0.3, 0.7], [[-0.5], [0.4]], 0.15)
    return LabeledMixture(model, [0, 1], 2)


class TestQuadratureGrid:

    @pytest.mark.parametrize('kwargs', [{'nodes': 16}, {'d': 4}, {'d': 0}, {'scheme': 'sobol'}])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            QuadratureGrid(**kwargs)

    @pytest.mark.parametrize('scheme', ['gauss_hermite', 'tensor_grid'])
    def test_leading_nodes(self, scheme):
        z, w = QuadratureGrid(scheme=scheme, nodes=32, d=3).leading_nodes()
        assert len(z) == 32
        assert w.sum() == pytest.approx(1.0)
        assert np.sum(w * z) == pytest.approx(0.0, abs=1e-12)

    def test_refined(self):
        assert QuadratureGrid(nodes=32).refined().nodes == 64


class TestExactProbabilities:

    def test_zero_noise_is_indicator(self, xor_mixture, smoothed_factory):
        probs = exact_class_probabilities([0.4, -0.3], 0.0, smoothed_factory(xor_mixture))
        np.testing.assert_array_equal(probs, [0.0, 1.0])

    def test_symmetric_line(self, line_mixture, smoothed_factory):
        probs = exact_class_probabilities([0.0], 1.0, smoothed_factory(line_mixture),
                                          QuadratureGrid(nodes=32, d=1))
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-8)

    def test_line_matches_monte_carlo(self, skewed_line_mixture, smoothed_factory):
        smoothed = smoothed_factory(skewed_line_mixture)
        sigma = 0.8
        exact = exact_class_probabilities([0.1], sigma, smoothed, QuadratureGrid(nodes=32, d=1))
        solution = get_timestep(smoothed.schedule, sigma)
        draws = 1_000_000
        noise = substream(0, 99).standard_normal((draws, 1)) * solution.sigma_achieved
        labels = smoothed.classify_noised(0.1 + noise, sigma, solution)
        p_mc = np.mean(labels == 1)
        se = np.sqrt(exact[1] * (1 - exact[1]) / draws)
        assert abs(p_mc - exact[1]) < 4 * se

    def test_line_converges(self, skewed_line_mixture, smoothed_factory):
        change = quadrature_change([0.1], 0.8, smoothed_factory(skewed_line_mixture),
                                   QuadratureGrid(nodes=32, d=1))
        assert change < 1e-7

    @pytest.mark.parametrize('x1', [-0.5, -0.2, 0.3, 0.7])
    def test_halfplane_closed_form(self, halfplane_mixture, smoothed_factory, x1):
        smoothed = smoothed_factory(halfplane_mixture)
        noise = get_timestep(smoothed.schedule, 1.0).sigma_achieved
        probs = exact_class_probabilities([x1, 0.2], 1.0, smoothed, QuadratureGrid(nodes=32))
        assert probs[1] == pytest.approx(ndtr(x1 / noise), abs=1e-8)

    def test_plane_converges(self, halfplane_mixture, smoothed_factory):
        change = quadrature_change([0.25, -0.4], 1.0, smoothed_factory(halfplane_mixture),
                                   QuadratureGrid(nodes=32))
        assert change < 1e-7

    @pytest.mark.parametrize('scheme, tol', [('gauss_hermite', 1e-6), ('tensor_grid', 1e-3)])
    def test_three_dimensions(self, smoothed_factory, scheme, tol):
        # decision depends on the second coordinate only
        model = MixtureModel([0.5, 0.5], [[0.0, -0.6, 0.0], [0.0, 0.6, 0.0]], 0.2)
        smoothed = smoothed_factory(LabeledMixture(model, [0, 1], 2))
        noise = get_timestep(smoothed.schedule, 1.0).sigma_achieved
        probs = exact_class_probabilities([0.3, 0.25, -0.1], 1.0, smoothed,
                                          QuadratureGrid(scheme=scheme, nodes=32, d=3))
        assert probs.sum() == pytest.approx(1.0, abs=1e-8)
        assert probs[1] == pytest.approx(ndtr(0.25 / noise), abs=tol)

    def test_rows_sum_to_one(self, xor_mixture, smoothed_factory):
        xs = np.array([[0.1, 0.2], [-0.5, 0.4], [0.9, -0.9]])
        probs = exact_class_probabilities_many(xs, 1.0, smoothed_factory(xor_mixture),
                                               QuadratureGrid(nodes=32))
        assert probs.shape == (3, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-8)

    def test_label(self, xor_mixture, smoothed_factory):
        assert exact_smoothed_label(Point(x=[0.5, 0.5]), 0.5, smoothed_factory(xor_mixture),
                                    QuadratureGrid(nodes=32)) == 0

    def test_stochastic_denoiser(self, xor_mixture, smoothed_factory):
        with pytest.raises(UnsupportedDenoiserError):
            exact_class_probabilities([0.0, 0.0], 1.0,
                                      smoothed_factory(xor_mixture, kind='ancestral_multi_step'))

    def test_grid_dimension_mismatch(self, xor_mixture, smoothed_factory):
        with pytest.raises(DimensionMismatchError):
            exact_class_probabilities([0.0, 0.0], 1.0, smoothed_factory(xor_mixture),
                                      QuadratureGrid(d=3))

    def test_exact_radius_is_finite(self):
        assert np.isfinite(exact_certified_radius(1.0, 0.5))
        assert exact_certified_radius(0.4, 0.5) == 0.0


class TestSoundnessSearch:

    def test_zero_radius(self, xor_mixture, smoothed_factory):
        report = soundness_search([0.3, 0.3], 0.0, smoothed_factory(xor_mixture), 1.0,
                                  QuadratureGrid(nodes=32))
        assert report.ok
        assert report.evaluations == 0

    @pytest.mark.parametrize('x1', [-0.3, 0.15, 0.4])
    def test_halfplane_certified_and_inflated(self, halfplane_mixture, smoothed_factory, x1):
        smoothed = smoothed_factory(halfplane_mixture)
        grid = QuadratureGrid(nodes=32)
        noise = get_timestep(smoothed.schedule, 1.0).sigma_achieved
        probs = exact_class_probabilities([x1, 0.0], 1.0, smoothed, grid)
        radius = exact_certified_radius(probs.max(), noise)
        assert radius == pytest.approx(abs(x1), abs=1e-5)

        certified = soundness_search([x1, 0.0], radius, smoothed, 1.0, grid, **SEARCH)
        assert certified.ok

        inflated = soundness_search([x1, 0.0], 1.5 * radius, smoothed, 1.0, grid, **SEARCH)
        assert not inflated.ok
        worst = inflated.violations[0]
        assert worst.norm <= 1.5 * radius + 1e-12
        assert worst.margin > 1e-4

    def test_xor_certified_radii(self, xor_mixture, smoothed_factory):
        smoothed = smoothed_factory(xor_mixture)
        grid = QuadratureGrid(nodes=32)
        points = sample_points(xor_mixture, 5, seed=21)
        xs = np.stack([p.x for p in points])
        probs = exact_class_probabilities_many(xs, 1.0, smoothed, grid)
        noise = get_timestep(smoothed.schedule, 1.0).sigma_achieved
        for point, p in zip(points, probs):
            label = int(np.argmax(p))
            radius = exact_certified_radius(p[label], noise)
            report = soundness_search(point, radius, smoothed, 1.0, grid, label=label, **SEARCH)
            assert report.ok, report.violations[:1]

    @pytest.mark.slow
    def test_full_soundness_suite(self, xor_mixture, smoothed_factory):
        smoothed = smoothed_factory(xor_mixture)
        grid = QuadratureGrid(nodes=32)
        points = sample_points(xor_mixture, 500, seed=5)
        xs = np.stack([p.x for p in points])
        probs = exact_class_probabilities_many(xs, 1.0, smoothed, grid)
        noise = get_timestep(smoothed.schedule, 1.0).sigma_achieved
        for point, p in zip(points, probs):
            label = int(np.argmax(p))
            radius = exact_certified_radius(p[label], noise)
            report = soundness_search(point, radius, smoothed, 1.0, grid, label=label,
                                      directions=10_000, ascent_steps=100, starts=3)
            assert report.ok


class TestBoundValidity:

    def test_monte_carlo_within_exact(self, halfplane_mixture, smoothed_factory):
        smoothed = smoothed_factory(halfplane_mixture)
        params = CertifyParams(sigma=1.0, n0=100, n=10_000)
        report = bound_validity_trials([0.3, 0.0], params, smoothed, trials=40,
                                       grid=QuadratureGrid(nodes=32))
        noise = get_timestep(smoothed.schedule, 1.0).sigma_achieved
        assert report.p_exact[1] == pytest.approx(ndtr(0.3 / noise), abs=1e-6)
        assert report.covered >= report.trials - 1

    @pytest.mark.slow
    def test_full_scale(self, halfplane_mixture, smoothed_factory):
        smoothed = smoothed_factory(halfplane_mixture)
        params = CertifyParams(sigma=1.0, n0=100, n=100_000, alpha_fail=0.001)
        report = bound_validity_trials([0.3, 0.0], params, smoothed, trials=1000,
                                       grid=QuadratureGrid(nodes=32))
        assert report.fraction >= 0.998
