import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basis.tensor import ContractError, frobenius_norm, matmul, signed_segment_sum, transpose

from conftest import dense_sketch_oracle


def test_matmul_hand_computed():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    np.testing.assert_array_equal(out, [[17.0], [39.0]])


def test_matmul_identity_and_zeros(rng):
    m = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(matmul(np.eye(3), m), m)
    np.testing.assert_array_equal(matmul(np.zeros((2, 3)), rng.normal(size=(3, 4))), np.zeros((2, 4)))


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_rejects_vectors():
    with pytest.raises(ContractError):
        matmul(np.ones(3), np.ones((3, 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_associative(n, k, m, p, seed):
    g = np.random.default_rng(seed)
    a, b, c = g.normal(size=(n, k)), g.normal(size=(k, m)), g.normal(size=(m, p))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-10 * max(np.linalg.norm(left), 1.0)


def test_transpose():
    np.testing.assert_array_equal(transpose(np.array([[1, 2], [3, 4]])), [[1, 3], [2, 4]])
    assert transpose(np.ones((1, 5))).shape == (5, 1)


def test_transpose_involution(rng):
    m = rng.normal(size=(4, 7))
    np.testing.assert_array_equal(transpose(transpose(m)), m)


def test_frobenius_norm():
    assert frobenius_norm(np.zeros((3, 2))) == 0.0
    assert frobenius_norm(np.array([[3.0, 4.0]])) == 5.0


def test_frobenius_homogeneity(rng):
    m = rng.normal(size=(5, 3))
    assert frobenius_norm(-2.5 * m) == pytest.approx(2.5 * frobenius_norm(m), rel=1e-15)


def test_segment_sum_hand_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = signed_segment_sum(x, np.array([0, 0]), np.array([1, -1]), 1)
    np.testing.assert_array_equal(out, [[-2.0, -2.0]])


def test_segment_sum_identity_bins_is_exact(rng):
    x = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(signed_segment_sum(x, np.arange(6), np.ones(6, int), 6), x)


def test_segment_sum_permutation(rng):
    x = rng.normal(size=(5, 2))
    perm = rng.permutation(5)
    out = signed_segment_sum(x, perm, np.ones(5, int), 5)
    np.testing.assert_array_equal(out[perm], x)


def test_segment_sum_empty_bins_are_zero():
    out = signed_segment_sum(np.ones((2, 3)), np.array([0, 0]), np.array([1, 1]), 4)
    np.testing.assert_array_equal(out[1:], 0.0)
    np.testing.assert_array_equal(out[0], 2.0)


def test_segment_sum_zero_input():
    out = signed_segment_sum(np.zeros((4, 3)), np.array([0, 1, 0, 1]), np.array([1, -1, 1, 1]), 2)
    np.testing.assert_array_equal(out, 0.0)


@pytest.mark.parametrize("bins", [[0, 2], [-1, 0]])
def test_segment_sum_out_of_range(bins):
    with pytest.raises(ContractError, match="out of range"):
        signed_segment_sum(np.ones((2, 2)), np.array(bins), np.array([1, 1]), 2)


def test_segment_sum_rejects_bad_signs():
    with pytest.raises(ContractError, match="signs"):
        signed_segment_sum(np.ones((2, 2)), np.array([0, 1]), np.array([1, 0]), 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_segment_sum_matches_dense_projection(B, R, N, seed):
    g = np.random.default_rng(seed)
    x = g.normal(size=(B, N))
    bins, signs = g.integers(0, R, size=B), g.choice([-1, 1], size=B)
    expected = dense_sketch_oracle(bins, signs, R) @ x
    np.testing.assert_allclose(signed_segment_sum(x, bins, signs, R), expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_signed_permutation_is_isometry(B, N, seed):
    g = np.random.default_rng(seed)
    x = g.normal(size=(B, N))
    out = signed_segment_sum(x, g.permutation(B), g.choice([-1, 1], size=B), B)
    assert frobenius_norm(out) == pytest.approx(frobenius_norm(x), rel=1e-14)
