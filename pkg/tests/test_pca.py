import numpy as np
import pytest

from accnet.errors import ContractError
from accnet.pca import fit_pca, project


class TestFit:
    def test_rank_one_data_explained_entirely_by_first_component(self):
        rng = np.random.default_rng(0)
        direction = np.array([3.0, 4.0]) / 5.0
        data = rng.normal(size=(200, 1)) * direction + np.array([1.0, -2.0])
        res = fit_pca(data)
        assert abs(res.explained[0] - 1.0) < 1e-9
        assert res.explained[1] < 1e-9
        # component parallel to the generating direction
        assert abs(abs(res.components[0] @ direction) - 1.0) < 1e-9

    def test_components_orthonormal(self):
        rng = np.random.default_rng(1)
        res = fit_pca(rng.normal(size=(50, 4)))
        gram = res.components @ res.components.T
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-10)

    def test_variances_descending(self):
        rng = np.random.default_rng(2)
        res = fit_pca(rng.normal(size=(80, 5)) * [5, 1, 3, 0.1, 2])
        assert all(a >= b for a, b in zip(res.variances, res.variances[1:]))

    def test_sign_convention_first_nonzero_loading_positive(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(60, 3))
        res = fit_pca(data)
        for row in res.components:
            nz = row[np.abs(row) > 1e-12]
            assert nz[0] > 0

    def test_repeat_fit_identical(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(40, 3))
        a, b = fit_pca(data), fit_pca(data)
        np.testing.assert_array_equal(a.components, b.components)

    def test_component_count_truncation(self):
        rng = np.random.default_rng(5)
        res = fit_pca(rng.normal(size=(30, 4)), n_components=2)
        assert res.components.shape == (2, 4)
        assert res.variances.shape == (2,)

    def test_constant_data_zero_explained(self):
        res = fit_pca(np.ones((10, 3)))
        assert res.explained.sum() == 0.0

    @pytest.mark.parametrize("bad", [np.ones(5), np.ones((1, 3)), np.ones((2, 3, 1))])
    def test_bad_shapes_rejected(self, bad):
        with pytest.raises(ContractError):
            fit_pca(bad)

    def test_bad_component_count_rejected(self):
        with pytest.raises(ContractError):
            fit_pca(np.ones((5, 2)) + np.eye(5, 2), n_components=3)


class TestProject:
    def test_full_basis_preserves_pairwise_distances(self):
        rng = np.random.default_rng(6)
        data = rng.normal(size=(30, 2))
        res = fit_pca(data)
        coords = project(res, data)
        for i in range(0, 30, 7):
            for j in range(1, 30, 5):
                orig = np.linalg.norm(data[i] - data[j])
                proj = np.linalg.norm(coords[i] - coords[j])
                assert abs(orig - proj) < 1e-10

    def test_projected_mean_is_origin(self):
        rng = np.random.default_rng(7)
        data = rng.normal(size=(25, 3)) + 4.0
        res = fit_pca(data)
        np.testing.assert_allclose(project(res, data).mean(axis=0),
                                   np.zeros(3), atol=1e-12)

    def test_single_row_projection(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(20, 3))
        res = fit_pca(data, n_components=2)
        one = project(res, data[0])
        assert one.shape == (2,)
        np.testing.assert_allclose(one, project(res, data)[0])

    def test_dimension_mismatch_rejected(self):
        res = fit_pca(np.random.default_rng(9).normal(size=(10, 3)))
        with pytest.raises(ContractError):
            project(res, np.ones(4))
