"""Tests for flat parameter-vector arithmetic."""

import numpy as np
import pytest

from fedsim.params import (
    DimensionMismatchError,
    NonFiniteError,
    as_vector,
    axpy,
    elementwise_div_add,
    elementwise_square,
    l2_norm,
    weighted_sum,
)


def test_as_vector_copies_and_coerces():
    src = [1, 2, 3]
    v = as_vector(src)
    assert v.dtype == np.float64
    assert v.shape == (3,)
    arr = np.array([1.0, 2.0])
    out = as_vector(arr)
    out[0] = 99.0
    assert arr[0] == 1.0  # input untouched


def test_as_vector_rejects_matrices_and_empty():
    with pytest.raises(DimensionMismatchError):
        as_vector(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        as_vector([])


def test_axpy_hand_case():
    out = axpy(2.0, np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.array_equal(out, [5.0, 8.0])


def test_axpy_does_not_mutate():
    x = np.array([1.0])
    y = np.array([2.0])
    axpy(3.0, x, y)
    assert x[0] == 1.0 and y[0] == 2.0


def test_axpy_rejects_bad_inputs():
    with pytest.raises(DimensionMismatchError):
        axpy(1.0, np.zeros(2), np.zeros(3))
    with pytest.raises(NonFiniteError):
        axpy(np.inf, np.zeros(2), np.zeros(2))
    with pytest.raises(NonFiniteError):
        axpy(1.0, np.array([np.nan, 0.0]), np.zeros(2))


def test_weighted_sum_dyadic_weights_exact():
    # 0.25 and 0.75 are exact binary fractions, so the result is exact
    out = weighted_sum([np.array([0.0]), np.array([4.0])], [0.25, 0.75])
    assert out[0] == 3.0


def test_weighted_sum_repeatable_bitwise():
    rng = np.random.default_rng(5)
    vecs = [rng.standard_normal(17) for _ in range(6)]
    ws = list(rng.dirichlet(np.ones(6)))
    a = weighted_sum(vecs, ws)
    b = weighted_sum(vecs, ws)
    assert np.array_equal(a, b)


def test_weighted_sum_validation():
    with pytest.raises(ValueError):
        weighted_sum([], [])
    with pytest.raises(DimensionMismatchError):
        weighted_sum([np.zeros(2)], [0.5, 0.5])
    with pytest.raises(DimensionMismatchError):
        weighted_sum([np.zeros(2), np.zeros(3)], [0.5, 0.5])
    with pytest.raises(ValueError):
        weighted_sum([np.zeros(2), np.zeros(2)], [1.5, -0.5])
    with pytest.raises(NonFiniteError):
        weighted_sum([np.array([np.inf, 0.0])], [1.0])


def test_l2_norm_hand_case():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0


def test_elementwise_square():
    assert np.array_equal(elementwise_square(np.array([-2.0, 3.0])), [4.0, 9.0])


def test_elementwise_div_add_hand_case():
    # 0.1 / (sqrt(0.01) + 1e-3), the server Adam denominator shape
    out = elementwise_div_add(np.array([0.1]), np.array([0.01]), 1e-3)
    expected = 0.1 / (np.sqrt(0.01) + 1e-3)
    assert abs(out[0] - expected) <= 1e-15
