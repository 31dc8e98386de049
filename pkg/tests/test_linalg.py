import itertools

import numpy as np
import pytest

from psilon.linalg import (
    DimensionError,
    make_rng,
    matmul,
    op_inf_norm,
    op_inf_one_norm,
    orthogonal_init,
)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)

    def test_hand_product(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
        np.testing.assert_array_equal(out, np.array([[3.0], [7.0]]))

    def test_against_triple_loop(self):
        rng = make_rng(0)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        naive = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(7):
                    naive[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(a, b), naive, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = make_rng(1)
        for _ in range(20):
            a = rng.standard_normal((4, 5))
            b = rng.standard_normal((5, 6))
            c = rng.standard_normal((6, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            np.testing.assert_allclose(left, right, rtol=1e-9)


class TestOpInfNorm:
    def test_max_row_abs_sum(self):
        assert op_inf_norm(np.array([[1.0, -2.0], [3.0, 4.0]])) == 7.0

    def test_zero(self):
        assert op_inf_norm(np.zeros((3, 3))) == 0.0

    def test_matches_sign_enumeration(self):
        rng = make_rng(2)
        w = rng.standard_normal((4, 4))
        best = max(
            np.max(np.abs(w @ np.array(t)))
            for t in itertools.product((-1.0, 1.0), repeat=4)
        )
        assert op_inf_norm(w) == pytest.approx(best, rel=1e-12)


class TestOpInfOneNorm:
    def test_sign_cancellation(self):
        val, exact = op_inf_one_norm(np.array([[1.0, -1.0]]))
        assert (val, exact) == (2.0, True)

    def test_all_ones_row(self):
        val, exact = op_inf_one_norm(np.array([[1.0, 1.0]]))
        assert (val, exact) == (2.0, True)

    def test_fallback_above_limit(self):
        w = np.ones((1, 30))
        val, exact = op_inf_one_norm(w)
        assert val == 30.0
        assert exact is False

    def test_exact_bounds_random_directions(self):
        rng = make_rng(3)
        for _ in range(10):
            w = rng.standard_normal((3, 5))
            val, exact = op_inf_one_norm(w)
            assert exact
            t = rng.uniform(-1.0, 1.0, size=(1000, 5))
            empirical = np.max(np.sum(np.abs(t @ w.T), axis=1))
            assert val >= empirical - 1e-12
            assert val <= np.sum(np.abs(w)) + 1e-12


class TestOrthogonalInit:
    def test_square_orthogonal(self):
        q = orthogonal_init(3, 3, make_rng(4))
        np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-10)

    def test_wide_rows_orthonormal(self):
        q = orthogonal_init(2, 5, make_rng(5))
        np.testing.assert_allclose(q @ q.T, np.eye(2), atol=1e-10)

    def test_deterministic_in_seed(self):
        a = orthogonal_init(4, 6, make_rng(6))
        b = orthogonal_init(4, 6, make_rng(6))
        np.testing.assert_array_equal(a, b)

    def test_singular_values_one(self):
        for rows, cols in [(3, 3), (2, 7), (7, 2), (5, 4)]:
            q = orthogonal_init(rows, cols, make_rng(7))
            s = np.linalg.svd(q, compute_uv=False)
            np.testing.assert_allclose(s, 1.0, atol=1e-8)
