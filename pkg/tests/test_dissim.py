import math

import numpy as np
import pytest

from dissim import (
    PHI_LEVEL, calibrate_gamma, euclidean_distances, minibatch_blocks, pca_embed,
    pca_project, phi, phi_transform, sample_pairs, symmetrize
)
from errors import ValidationError


class TestEuclidean:
    def test_three_four_five(self):
        D = euclidean_distances([[0.0, 0.0], [3.0, 4.0]])
        assert D[0, 1] == pytest.approx(5.0)
        assert D[1, 0] == pytest.approx(5.0)
        np.testing.assert_array_equal(np.diag(D), 0.0)

    def test_identical_rows(self):
        assert euclidean_distances([[1.0, 2.0], [1.0, 2.0]])[0, 1] == 0.0

    def test_matches_double_loop(self, rng):
        X = rng.normal(size=(3, 4))
        D = euclidean_distances(X)
        for i in range(3):
            for j in range(3):
                assert D[i, j] == pytest.approx(math.sqrt(sum((X[i] - X[j]) ** 2)), abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            euclidean_distances([[0.0, np.nan], [1.0, 1.0]])


class TestPhi:
    def test_calibration_points(self, rng):
        D = euclidean_distances(rng.normal(size=(30, 2)))
        view = phi_transform(D, 0.9)
        assert phi(0.0, view.gamma) == 0.0
        assert phi(view.d0, view.gamma) == pytest.approx(1.0 - PHI_LEVEL, abs=1e-12)
        assert phi(2 * view.d0, view.gamma) == pytest.approx(1.0 - PHI_LEVEL ** 4, abs=1e-12)
        assert view.gamma == pytest.approx(-math.log(0.05) / view.d0 ** 2)

    def test_quantile_is_linear_interpolation(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        d0, _ = calibrate_gamma(values, 0.5)
        assert d0 == pytest.approx(2.5)
        assert calibrate_gamma(values, 1.0)[0] == 4.0

    def test_dense_view_keeps_upper_triangle(self, rng):
        D = euclidean_distances(rng.normal(size=(6, 2)))
        view = phi_transform(D, 0.9)
        assert view.mode == "dense"
        assert view.n_pairs == 15
        assert np.all(view.rows < view.cols)
        assert np.all((view.delta_star >= 0.0) & (view.delta_star <= 1.0))

    def test_sampled_view(self, rng):
        D = euclidean_distances(rng.normal(size=(10, 2)))
        J = sample_pairs(10, 3, seed=1)
        view = phi_transform(D, 0.9, neighbors=J)
        assert view.mode == "sampled"
        assert view.n_pairs == 30
        assert view.p == 3
        np.testing.assert_allclose(view.delta_star, view.lookup(view.rows, view.cols))

    def test_monotone(self):
        grid = np.linspace(0.0, 5.0, 200)
        assert np.all(np.diff(phi(grid, 0.7)) >= 0.0)

    def test_degenerate_dissimilarities(self):
        with pytest.raises(ValidationError):
            phi_transform(np.zeros((4, 4)), 0.9)

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValidationError):
            phi_transform(np.array([[1.0, 2.0], [2.0, 0.0]]))

    def test_rejects_negative_and_bad_quantile(self):
        with pytest.raises(ValidationError):
            phi_transform(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        with pytest.raises(ValidationError):
            calibrate_gamma(np.ones(3), 0.0)

    def test_fixed_calibration(self, rng):
        D = euclidean_distances(rng.normal(size=(8, 2)))
        view = phi_transform(D, calibration=(2.0, 0.5))
        assert (view.d0, view.gamma) == (2.0, 0.5)
        np.testing.assert_allclose(view.delta_star, phi(D[view.rows, view.cols], 0.5))


class TestSamplePairs:
    def test_full_sets_when_p_is_n_minus_one(self):
        J = sample_pairs(5, 4, seed=0)
        for i in range(5):
            assert sorted(J[i]) == [j for j in range(5) if j != i]

    def test_sizes_and_storage(self):
        J = sample_pairs(1000, 100, seed=3)
        assert J.shape == (1000, 100)
        assert J.size == 100_000
        assert all(len(set(row)) == 100 for row in J[:50])
        assert not np.any(J == np.arange(1000)[:, None])

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_pairs(50, 7, seed=9), sample_pairs(50, 7, seed=9))

    @pytest.mark.parametrize("p", [0, 5])
    def test_out_of_range(self, p):
        with pytest.raises(ValidationError):
            sample_pairs(5, p)


class TestMinibatchBlocks:
    def test_block_sizes(self):
        blocks = minibatch_blocks(100, 4, seed=0)
        assert [len(rows) for rows, _ in blocks] == [300] * 4

    def test_singleton_pairs(self):
        blocks = minibatch_blocks(10, 5, seed=0)
        assert [len(rows) for rows, _ in blocks] == [1] * 5

    def test_no_duplicates_no_cross_group(self):
        blocks = minibatch_blocks(23, 4, seed=2)
        seen = set()
        group_of = {}
        for b, (rows, cols) in enumerate(blocks):
            for i, j in zip(rows, cols):
                pair = (min(i, j), max(i, j))
                assert pair not in seen
                seen.add(pair)
                for k in pair:
                    assert group_of.setdefault(k, b) == b
        sizes = sorted(len(set(np.concatenate(b))) for b in blocks)
        assert sizes[-1] - sizes[0] <= 1

    def test_single_block_is_all_pairs(self):
        (rows, cols), = minibatch_blocks(8, 1, seed=0)
        assert len(rows) == 28

    def test_deterministic_and_reshuffled(self):
        a = minibatch_blocks(40, 4, seed=[0, 1])
        b = minibatch_blocks(40, 4, seed=[0, 1])
        c = minibatch_blocks(40, 4, seed=[0, 2])
        for (ra, ca), (rb, cb) in zip(a, b):
            np.testing.assert_array_equal(ra, rb)
            np.testing.assert_array_equal(ca, cb)
        assert any(not np.array_equal(ra, rc) for (ra, _), (rc, _) in zip(a, c))

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            minibatch_blocks(10, 6)


class TestSymmetrize:
    def test_mean(self):
        D = np.array([[0.0, 2.0], [4.0, 0.0]])
        np.testing.assert_array_equal(symmetrize(D), [[0.0, 3.0], [3.0, 0.0]])

    def test_symmetric_unchanged_and_exact(self, rng):
        A = rng.uniform(size=(5, 5))
        S = symmetrize(A)
        np.testing.assert_array_equal(S, S.T)
        np.testing.assert_array_equal(symmetrize(S), S)

    def test_non_square(self):
        with pytest.raises(ValidationError):
            symmetrize(np.zeros((2, 3)))


class TestPca:
    def test_scores_match_covariance_eigendecomposition(self, rng):
        D = symmetrize(rng.uniform(size=(6, 6)))
        emb, scores = pca_embed(D, 2)
        centered = D - D.mean(axis=0)
        values, vectors = np.linalg.eigh(np.cov(centered, rowvar=False))
        oracle = centered @ vectors[:, ::-1][:, :2]
        for k in range(2):
            assert np.allclose(scores[:, k], oracle[:, k], atol=1e-8) or \
                np.allclose(scores[:, k], -oracle[:, k], atol=1e-8)
        np.testing.assert_allclose(emb.projection.T @ emb.projection, np.eye(2), atol=1e-8)
        np.testing.assert_allclose(scores.mean(axis=0), 0.0, atol=1e-8)

    def test_sign_convention(self, rng):
        emb, _ = pca_embed(symmetrize(rng.uniform(size=(7, 7))), 3)
        for k in range(emb.p):
            column = emb.projection[:, k]
            assert column[np.argmax(np.abs(column))] > 0

    def test_full_rank_reconstruction(self, rng):
        D = symmetrize(rng.uniform(size=(6, 6)))
        emb, scores = pca_embed(D, 5)
        np.testing.assert_allclose(scores @ emb.projection.T + emb.mean_row, D, atol=1e-8)

    def test_rank_truncation(self):
        base = np.array([0.0, 1.0, 2.0, 3.0])
        D = np.abs(base[:, None] - base[None, :])
        emb, scores = pca_embed(D, 4)
        assert emb.p < 4
        assert scores.shape == (4, emb.p)

    def test_project_consistency(self, rng):
        D = symmetrize(rng.uniform(size=(8, 8)))
        emb, scores = pca_embed(D, 3)
        np.testing.assert_allclose(pca_project(emb, emb.mean_row), 0.0, atol=1e-12)
        np.testing.assert_allclose(pca_project(emb, D[4]), scores[4], atol=1e-12)
        new = rng.uniform(size=8)
        np.testing.assert_allclose(pca_project(emb, new), (new - emb.mean_row) @ emb.projection)

    def test_project_length_mismatch(self, rng):
        emb, _ = pca_embed(symmetrize(rng.uniform(size=(5, 5))), 2)
        with pytest.raises(ValidationError):
            pca_project(emb, np.zeros(4))

    def test_requires_symmetry(self, rng):
        with pytest.raises(ValidationError):
            pca_embed(rng.uniform(size=(5, 5)) + np.triu(np.ones((5, 5))), 2)
