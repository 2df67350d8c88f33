import numpy as np
import pytest

from Services.errors import DataError
from Services.graph import build_laplacian, gaussian_similarity


class TestGaussianSimilarity:
    def test_identical_points(self):
        assert gaussian_similarity([1.0, 2.0], [1.0, 2.0], 0.5) == 1.0

    def test_unit_distance(self):
        assert gaussian_similarity([0.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(np.exp(-1.0))

    def test_far_points_underflow_to_zero(self):
        assert gaussian_similarity([0.0], [100.0], 0.1) == 0.0

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_non_positive_sigma(self, sigma):
        with pytest.raises(ValueError, match="sigma"):
            gaussian_similarity([0.0], [1.0], sigma)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_similarity([0.0, 1.0], [1.0], 1.0)


class TestBuildLaplacian:
    @pytest.fixture
    def graph(self, rng):
        return build_laplacian(rng.normal(size=(12, 3)), n_labeled=5, sigma=1.0)

    def test_adjacency_symmetric_with_unit_diagonal(self, graph):
        np.testing.assert_array_equal(graph.adjacency, graph.adjacency.T)
        np.testing.assert_array_equal(np.diag(graph.adjacency), np.ones(12))

    def test_matches_pairwise_similarity(self, rng):
        X = rng.normal(size=(6, 2))
        graph = build_laplacian(X, n_labeled=2, sigma=0.7)
        for i in range(6):
            for j in range(6):
                assert graph.adjacency[i, j] == pytest.approx(gaussian_similarity(X[i], X[j], 0.7), rel=1e-12)

    def test_laplacian_rows_sum_to_zero(self, graph):
        np.testing.assert_allclose(graph.laplacian.sum(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(graph.degree, graph.adjacency.sum(axis=1))

    def test_laplacian_positive_semidefinite(self, graph):
        assert np.linalg.eigvalsh(graph.laplacian).min() >= -1e-10

    def test_blocks(self, graph):
        assert graph.ll.shape == (5, 5)
        assert graph.lu.shape == (5, 7)
        assert graph.ul.shape == (7, 5)
        assert graph.uu.shape == (7, 7)
        np.testing.assert_array_equal(graph.ul, graph.lu.T)

    def test_non_finite_feature(self):
        X = np.ones((4, 2))
        X[2, 1] = np.nan
        with pytest.raises(DataError) as excinfo:
            build_laplacian(X, n_labeled=2, sigma=1.0)
        assert excinfo.value.row == 2

    @pytest.mark.parametrize("n_labeled", [0, 4])
    def test_needs_both_parts(self, n_labeled):
        with pytest.raises(DataError):
            build_laplacian(np.zeros((4, 2)), n_labeled=n_labeled, sigma=1.0)

    def test_non_positive_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            build_laplacian(np.zeros((4, 2)), n_labeled=2, sigma=0.0)
