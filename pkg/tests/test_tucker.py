import numpy as np
import pytest

from tuckervid.tensor import frobenius_norm, mode_multiply
from tuckervid.tucker import partial_tucker, reconstruct, tucker1_kernel, tucker2_kernel

from conftest import planted_kernel
from oracles import truncated_hosvd_error


def relative_error(t, factors):
    return frobenius_norm(t - reconstruct(factors)) / frobenius_norm(t)


class TestPartialTucker:
    def test_planted_outer_product_ranks_one(self, rng):
        core = rng.standard_normal((3, 4, 5, 1, 1))
        u = np.linalg.qr(rng.standard_normal((6, 1)))[0]
        v = np.linalg.qr(rng.standard_normal((7, 1)))[0]
        t = mode_multiply(mode_multiply(core, u, 3), v, 4)
        factors = partial_tucker(t, modes=(3, 4), ranks=(1, 1))
        assert relative_error(t, factors) <= 1e-8

    def test_full_ranks_lossless(self, rng):
        t = rng.standard_normal((2, 3, 3, 4, 5))
        factors = partial_tucker(t, modes=(3, 4), ranks=(4, 5))
        assert relative_error(t, factors) <= 1e-8

    def test_not_worse_than_truncated_hosvd(self, rng):
        t = rng.standard_normal((3, 5, 5, 6, 16))
        factors = partial_tucker(t, modes=(3, 4), ranks=(2, 3))
        baseline = truncated_hosvd_error(t, (3, 4), (2, 3))
        assert relative_error(t, factors) <= baseline + 1e-12

    def test_single_mode_subset(self, rng):
        t = rng.standard_normal((4, 5, 6))
        factors = partial_tucker(t, modes=(1,), ranks=(5,))
        assert factors.decomposed_modes == (1,)
        assert relative_error(t, factors) <= 1e-10

    def test_factors_column_orthonormal(self, rng):
        t = rng.standard_normal((3, 4, 5, 6, 7))
        factors = partial_tucker(t, modes=(3, 4), ranks=(2, 3))
        for _, u in factors.factors:
            np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-10)

    def test_core_shape(self, rng):
        t = rng.standard_normal((3, 4, 5, 6, 7))
        factors = partial_tucker(t, modes=(3, 4), ranks=(2, 3))
        assert factors.core.shape == (3, 4, 5, 2, 3)

    def test_fit_history_non_decreasing(self, rng):
        for _ in range(5):
            t = rng.standard_normal((3, 4, 4, 5, 6))
            factors = partial_tucker(t, modes=(3, 4), ranks=(2, 2))
            fits = np.asarray(factors.fit_history)
            assert np.all(np.diff(fits) >= -1e-12)

    def test_error_monotone_in_rank(self, rng):
        for _ in range(3):
            t = rng.standard_normal((2, 3, 3, 5, 6))
            base = relative_error(t, partial_tucker(t, (3, 4), (2, 3)))
            up_s = relative_error(t, partial_tucker(t, (3, 4), (3, 3)))
            up_t = relative_error(t, partial_tucker(t, (3, 4), (2, 4)))
            assert up_s <= base + 1e-10
            assert up_t <= base + 1e-10

    def test_zero_tensor(self):
        factors = partial_tucker(np.zeros((2, 3, 4)), modes=(1,), ranks=(2,))
        assert frobenius_norm(reconstruct(factors)) == 0.0

    def test_rejects_bad_arguments(self, rng):
        t = rng.standard_normal((3, 4, 5))
        with pytest.raises(ValueError):
            partial_tucker(t, modes=(0,), ranks=(0,))
        with pytest.raises(ValueError):
            partial_tucker(t, modes=(1,), ranks=(5,))
        with pytest.raises(ValueError):
            partial_tucker(t, modes=(3,), ranks=(1,))
        with pytest.raises(ValueError):
            partial_tucker(t, modes=(0, 0), ranks=(1, 1))
        with pytest.raises(ValueError):
            partial_tucker(t, modes=(0,), ranks=(1,), max_iters=0)
        bad = t.copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            partial_tucker(bad, modes=(0,), ranks=(1,))


class TestTucker2Kernel:
    def test_full_rank_reconstructs(self, rng):
        k = rng.standard_normal((3, 3, 3, 4, 5))
        factors = tucker2_kernel(k, 4, 5)
        assert relative_error(k, factors) <= 1e-8

    def test_shapes_for_middle_conv_layer(self, rng):
        k = rng.standard_normal((3, 5, 5, 6, 16))
        factors = tucker2_kernel(k, 2, 3)
        assert factors.core.shape == (3, 5, 5, 2, 3)
        assert factors.factor(3).shape == (6, 2)
        assert factors.factor(4).shape == (16, 3)

    def test_recovers_planted_factorization(self, rng):
        k = planted_kernel(rng, rs=2, rt=3)
        factors = tucker2_kernel(k, 2, 3)
        assert relative_error(k, factors) <= 1e-8


class TestTucker1Kernel:
    def test_planted_rank_one_matrix(self, rng):
        m = np.outer(rng.standard_normal(128), rng.standard_normal(84))
        factors = tucker1_kernel(m, mode=0, r=1)
        assert relative_error(m, factors) <= 1e-8

    def test_full_rank_lossless(self, rng):
        m = rng.standard_normal((10, 8))
        factors = tucker1_kernel(m, mode=0, r=10)
        assert relative_error(m, factors) <= 1e-10

    def test_stored_value_counts(self, rng):
        # A 128x84 weight at rank 1 stores 128 + 84 = 212 values.
        m = rng.standard_normal((128, 84))
        factors = tucker1_kernel(m, mode=0, r=1)
        assert factors.factor(0).size + factors.core.size == 212


class TestReconstruct:
    def test_identity_factors_return_core(self, rng):
        from tuckervid.tucker import TuckerFactors

        core = rng.standard_normal((3, 4, 5))
        factors = TuckerFactors(
            core=core, factors=[(1, np.eye(4))], shape=core.shape, fit_history=[1.0]
        )
        np.testing.assert_array_equal(reconstruct(factors), core)

    def test_planted_decomposition_exact(self, rng):
        core = rng.standard_normal((2, 3, 4))
        u = np.linalg.qr(rng.standard_normal((6, 3)))[0]
        t = mode_multiply(core, u, 1)
        factors = partial_tucker(t, modes=(1,), ranks=(3,))
        assert relative_error(t, factors) <= 1e-10
