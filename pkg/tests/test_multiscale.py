import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bmms import (
    CoarseningOperator,
    IncompleteChainError,
    InvalidDimensionError,
    MultiscaleDesign,
    ResolutionGrid,
    ScaleContribution,
    accumulate,
    build_dyadic_operator,
    downsample,
)


@st.composite
def operators(draw, max_fine=12):
    fine = draw(st.integers(1, max_fine))
    coarse = draw(st.integers(1, fine))
    mode = draw(st.sampled_from(["sum", "average"]))
    return build_dyadic_operator(fine, coarse, mode)


class TestCoarseningOperator:
    def test_dense_shape_and_sums(self):
        L = build_dyadic_operator(4, 2)
        np.testing.assert_array_equal(L.to_dense(), [[1, 0], [1, 0], [0, 1], [0, 1]])
        A = build_dyadic_operator(4, 2, "average")
        np.testing.assert_allclose(A.to_dense().sum(axis=0), 1.0)

    def test_uneven_blocks(self):
        assert build_dyadic_operator(5, 2).block_sizes().tolist() == [3, 2]
        assert build_dyadic_operator(7, 3).block_sizes().tolist() == [3, 2, 2]

    def test_empty_coarse_column_rejected(self):
        with pytest.raises(InvalidDimensionError):
            CoarseningOperator(np.array([0, 0, 2]), 3)

    def test_bad_mode(self):
        with pytest.raises(InvalidDimensionError):
            CoarseningOperator(np.array([0, 1]), 2, mode="max")

    def test_bad_sizes(self):
        with pytest.raises(InvalidDimensionError):
            build_dyadic_operator(3, 4)
        with pytest.raises(InvalidDimensionError):
            ResolutionGrid(0, 3)

    @given(operators(), st.integers(0, 2 ** 31))
    def test_lift_matches_dense(self, L, seed):
        theta = np.random.default_rng(seed).standard_normal(L.n_coarse)
        np.testing.assert_allclose(L.lift(theta), L.to_dense() @ theta, atol=1e-12)

    @given(operators(), st.data())
    def test_composition_is_matrix_product(self, L1, data):
        coarse = data.draw(st.integers(1, L1.n_coarse))
        mode = data.draw(st.sampled_from(["sum", "average"]))
        L2 = build_dyadic_operator(L1.n_coarse, coarse, mode)
        np.testing.assert_allclose(L1.then(L2).to_dense(), L1.to_dense() @ L2.to_dense())

    def test_lift_wrong_length(self):
        with pytest.raises(InvalidDimensionError):
            build_dyadic_operator(4, 2).lift(np.ones(3))

    def test_immutable(self):
        L = build_dyadic_operator(4, 2)
        with pytest.raises(ValueError):
            L.assignment[0] = 1


class TestMultiscaleDesign:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.X = rng.standard_normal((20, 8))
        self.d = MultiscaleDesign.from_sizes(self.X, [1, 2, 4, 8])

    def test_levels_are_nested(self):
        d = self.d
        assert d.n_levels == 4
        assert [g.size for g in d.grids] == [1, 2, 4, 8]
        for j in range(1, 4):
            np.testing.assert_allclose(d.X(j + 1) @ d.operators[j - 1].to_dense(), d.X(j))

    def test_coarsest_is_row_sum(self):
        np.testing.assert_allclose(self.d.X(1)[:, 0], self.X.sum(axis=1))

    def test_composite(self):
        for j in range(1, 5):
            np.testing.assert_allclose(self.X @ self.d.composite(j).to_dense(), self.d.X(j),
                                       atol=1e-12)

    def test_downsample_mismatch(self):
        with pytest.raises(InvalidDimensionError):
            downsample(self.X, build_dyadic_operator(4, 2))

    def test_bad_chain(self):
        with pytest.raises(InvalidDimensionError):
            MultiscaleDesign(self.X, (build_dyadic_operator(4, 2),))
        with pytest.raises(InvalidDimensionError):
            MultiscaleDesign.from_sizes(self.X, [4, 2, 8])
        with pytest.raises(InvalidDimensionError):
            self.d.X(5)

    def test_accumulate_reconstructs_fit(self):
        # sum_j X_j theta_j == X_K accumulate(theta)
        rng = np.random.default_rng(1)
        thetas = [rng.standard_normal(s) for s in (1, 2, 4, 8)]
        fit = sum(self.d.X(j + 1) @ t for j, t in enumerate(thetas))
        np.testing.assert_allclose(self.X @ accumulate(thetas, self.d, 4), fit, atol=1e-12)

    def test_accumulate_levels(self):
        thetas = [ScaleContribution(1, np.array([1.0])), ScaleContribution(2, np.array([1.0, -1.0]))]
        np.testing.assert_allclose(accumulate(thetas, self.d, 2), [2.0, 0.0])
        np.testing.assert_allclose(accumulate(thetas, self.d, 1), [1.0])

    def test_accumulate_missing_level(self):
        with pytest.raises(IncompleteChainError):
            accumulate([ScaleContribution(2, np.zeros(2))], self.d, 2)

    def test_single_level(self):
        d = MultiscaleDesign(self.X)
        assert d.n_levels == 1
        np.testing.assert_array_equal(d.X(1), self.X)

    @settings(max_examples=30)
    @given(st.integers(0, 2 ** 31), st.sampled_from(["sum", "average"]))
    def test_average_mode_nested(self, seed, mode):
        X = np.random.default_rng(seed).standard_normal((5, 9))
        d = MultiscaleDesign.from_sizes(X, [2, 3, 9], mode)
        np.testing.assert_allclose(X @ d.composite(1).to_dense(), d.X(1), atol=1e-12)
