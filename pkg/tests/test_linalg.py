"""Tests for the dense linear-algebra kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfrecon.linalg import (ConjugateGradientError, IllConditionedError,
                            RngStream, cg_solve, condition_estimate,
                            gaussian_matrix, min_norm_solve, rowspan_residuals)


def random_spd(rng, n, ridge=1.0):
    b = rng.normal((n, n))
    return b @ b.T + ridge * np.eye(n)


class TestGaussianSampling:
    def test_rejects_zero_std(self):
        with pytest.raises(ValueError):
            gaussian_matrix(RngStream(1), 2, 2, std=0.0)

    def test_rejects_empty_shape(self):
        with pytest.raises(ValueError):
            gaussian_matrix(RngStream(1), 0, 3, std=1.0)
        with pytest.raises(ValueError):
            gaussian_matrix(RngStream(1), 3, 0, std=1.0)

    def test_large_sample_moments(self):
        """Sample mean/std of a 1000x1000 draw sit within 0.01 of (0, 1)."""
        m = gaussian_matrix(RngStream(7), 1000, 1000, std=1.0)
        assert abs(m.mean()) < 0.01
        assert abs(m.std() - 1.0) < 0.01

    def test_same_seed_bit_identical(self):
        a = gaussian_matrix(RngStream(42, 3), 50, 20, std=0.5)
        b = gaussian_matrix(RngStream(42, 3), 50, 20, std=0.5)
        assert np.array_equal(a, b)

    def test_distinct_counters_decorrelate(self):
        a = gaussian_matrix(RngStream(42, 0), 100, 100, std=1.0)
        b = gaussian_matrix(RngStream(42, 1), 100, 100, std=1.0)
        assert not np.array_equal(a, b)

    def test_std_scaling(self):
        unit = RngStream(5).normal((200, 200))
        scaled = RngStream(5).normal((200, 200), std=2.5)
        np.testing.assert_allclose(scaled, 2.5 * unit)


class TestConjugateGradient:
    def test_identity_system(self):
        result = cg_solve(np.eye(3), np.array([1.0, 2.0, 3.0]))
        assert result.converged
        np.testing.assert_allclose(result.x, [1.0, 2.0, 3.0], atol=1e-12)

    def test_zero_rhs_zero_iterations(self):
        result = cg_solve(np.eye(4), np.zeros(4))
        assert result.converged
        assert result.iterations == 0
        np.testing.assert_array_equal(result.x, np.zeros(4))

    def test_matches_direct_solve_8x8(self):
        """Random SPD 8x8 agrees with the dense direct-elimination oracle."""
        rng = RngStream(123)
        gram = random_spd(rng, 8)
        rhs = rng.normal(8)
        expected = np.linalg.solve(gram, rhs)
        result = cg_solve(gram, rhs)
        assert result.converged
        np.testing.assert_allclose(result.x, expected, rtol=1e-8)

    def test_rejects_asymmetric(self):
        gram = np.array([[2.0, 0.5], [0.3, 2.0]])
        with pytest.raises(ValueError, match="symmetric"):
            cg_solve(gram, np.ones(2))

    def test_rejects_nan(self):
        gram = np.eye(2)
        with pytest.raises(ConjugateGradientError):
            cg_solve(gram, np.array([np.nan, 1.0]))

    def test_indefinite_raises(self):
        gram = np.diag([1.0, -1.0])
        with pytest.raises(ConjugateGradientError):
            cg_solve(gram, np.array([1.0, 1.0]))

    def test_nonconvergence_flag(self):
        gram = random_spd(RngStream(9), 12, ridge=1e-8)
        rhs = RngStream(10).normal(12)
        result = cg_solve(gram, rhs, tol=1e-16, max_iter=1)
        assert not result.converged
        assert result.iterations == 1

    @settings(deadline=None, max_examples=25)
    @given(st.integers(min_value=1, max_value=16), st.integers(min_value=0, max_value=2**31))
    def test_agrees_with_elimination_up_to_16(self, n, seed):
        """Any small SPD system matches the direct solve to 1e-8 relative."""
        rng = RngStream(seed)
        gram = random_spd(rng, n)
        rhs = rng.normal(n)
        expected = np.linalg.solve(gram, rhs)
        result = cg_solve(gram, rhs)
        assert result.converged
        np.testing.assert_allclose(result.x, expected, rtol=1e-8, atol=1e-10)


class TestMinNormSolve:
    def test_orthonormal_features(self):
        theta = min_norm_solve(np.eye(2), np.array([3.0, 4.0]))
        np.testing.assert_allclose(theta, [3.0, 4.0], atol=1e-12)

    def test_single_row_closed_form(self):
        """features (1, 2, 2), target 3: theta = 3 phi^T / ||phi||^2."""
        theta = min_norm_solve(np.array([[1.0, 2.0, 2.0]]), np.array([3.0]))
        np.testing.assert_allclose(theta, [1 / 3, 2 / 3, 2 / 3], rtol=1e-12)

    def test_interpolates_and_is_min_norm(self):
        rng = RngStream(77)
        features = rng.normal((5, 50))
        targets = rng.normal(5)
        theta = min_norm_solve(features, targets)
        np.testing.assert_allclose(
            np.linalg.norm(features @ theta - targets) / np.linalg.norm(targets),
            0.0, atol=1e-8)
        # adding any null-space perturbation can only grow the norm
        for trial in range(10):
            z = rng.normal(50)
            null_part = z - features.T @ np.linalg.solve(
                features @ features.T, features @ z)
            perturbed = theta + null_part
            np.testing.assert_allclose(
                features @ perturbed, features @ theta, atol=1e-8)
            assert np.linalg.norm(perturbed) >= np.linalg.norm(theta) - 1e-10

    def test_output_in_row_space(self):
        """theta has no component off the feature row span (second solve)."""
        rng = RngStream(3)
        features = rng.normal((6, 40))
        theta = min_norm_solve(features, rng.normal((6, 2)))
        residuals, _ = rowspan_residuals(features, theta)
        assert np.linalg.norm(residuals) / np.linalg.norm(theta) < 1e-10

    def test_rejects_overdetermined(self):
        with pytest.raises(ValueError):
            min_norm_solve(np.ones((4, 2)), np.ones(4))

    def test_ill_conditioned_raises(self):
        features = np.array([[1.0, 0.0, 0.0], [1.0 + 1e-15, 0.0, 0.0]])
        with pytest.raises(IllConditionedError):
            min_norm_solve(features, np.array([1.0, 2.0]))

    def test_multi_column_targets(self):
        rng = RngStream(8)
        features = rng.normal((4, 30))
        targets = rng.normal((4, 3))
        theta = min_norm_solve(features, targets)
        assert theta.shape == (30, 3)
        np.testing.assert_allclose(features @ theta, targets, atol=1e-8)


class TestRowspanResiduals:
    def test_vectors_in_span_have_zero_residual(self):
        rng = RngStream(21)
        features = rng.normal((5, 30))
        coefficients = rng.normal((5, 2))
        vectors = features.T @ coefficients
        residuals, alphas = rowspan_residuals(features, vectors)
        assert np.linalg.norm(residuals) < 1e-10 * np.linalg.norm(vectors)
        np.testing.assert_allclose(alphas, coefficients, atol=1e-8)

    def test_orthogonal_vector_untouched(self):
        features = np.zeros((2, 4))
        features[0, 0] = 1.0
        features[1, 1] = 1.0
        vectors = np.array([[0.0], [0.0], [1.0], [0.0]])
        residuals, _ = rowspan_residuals(features, vectors)
        np.testing.assert_allclose(residuals, vectors, atol=1e-12)

    def test_singular_gram_is_jittered(self):
        """Duplicate feature rows (singular Gram) still produce a solve."""
        rng = RngStream(4)
        row = rng.normal(20)
        features = np.stack([row, row, rng.normal(20)])
        vectors = rng.normal((20, 1))
        residuals, _ = rowspan_residuals(features, vectors)
        assert np.all(np.isfinite(residuals))


class TestConditionEstimate:
    def test_identity(self):
        assert condition_estimate(np.eye(5)) == pytest.approx(1.0)

    def test_singular_is_infinite(self):
        gram = np.zeros((3, 3))
        gram[0, 0] = 1.0
        assert condition_estimate(gram) == float("inf")
