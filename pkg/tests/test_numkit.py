import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from aibe.numkit import (NumericError, ShapeError, finite_difference_gradient, format_matrix, hadamard,
                         load_matrix, make_rng, matmul, parse_matrix, relative_error, relu, row_l2_normalize,
                         row_l2_normalize_backward, save_matrix)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            s = 0.0
            for k in range(len(b)):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return np.array(out)


def test_matmul_hand_cases(rng):
    x = rng.standard_normal((3, 4))
    assert np.array_equal(matmul(np.eye(3), x), x)
    assert matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]])).tolist() == [[3.0], [7.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    assert np.max(np.abs(matmul(a, b) - triple_loop(a.tolist(), b.tolist()))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match="2x3.*2x2"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal((5, 2))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


def test_hadamard():
    a = np.array([[2.0, 3.0]])
    assert hadamard(a, np.ones_like(a)).tolist() == a.tolist()
    assert not hadamard(a, np.zeros_like(a)).any()
    assert hadamard(a, np.array([[4.0, 5.0]])).tolist() == [[8.0, 15.0]]
    with pytest.raises(ShapeError):
        hadamard(a, np.ones((2, 2)))


@given(arrays(np.float64, (3, 4), elements=finite))
def test_relu_idempotent(x):
    assert np.array_equal(relu(relu(x)), relu(x))
    assert np.all(relu(x) >= 0)


def test_relu_cases():
    assert relu(np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]


def test_normalize_cases():
    assert np.allclose(row_l2_normalize(np.array([[3.0, 4.0]])), [[0.6, 0.8]], atol=1e-15)
    assert row_l2_normalize(np.zeros((1, 2))).tolist() == [[0.0, 0.0]]
    u = np.array([[0.6, 0.8]])
    assert np.allclose(row_l2_normalize(u), u, atol=1e-15)


@given(arrays(np.float64, (4, 3), elements=finite))
def test_normalize_unit_and_idempotent(x):
    y = row_l2_normalize(x)
    norms = np.linalg.norm(y, axis=1)
    nonzero = np.linalg.norm(x, axis=1) > 0
    assert np.all(np.abs(norms[nonzero] - 1) < 1e-12)
    assert np.allclose(row_l2_normalize(y), y, atol=1e-12)


def test_normalize_backward_against_differences(rng):
    x, g = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    num = finite_difference_gradient(lambda z: np.sum(g * row_l2_normalize(z)), x)
    assert relative_error(row_l2_normalize_backward(x, g), num) < 1e-7


def test_fd_examples():
    assert abs(finite_difference_gradient(lambda x: np.sum(x * x), np.array([[3.0]]))[0, 0] - 6) < 1e-6
    assert np.all(np.abs(finite_difference_gradient(lambda x: 4.2, np.ones((2, 2))) < 1e-8))
    g = finite_difference_gradient(lambda x: np.sum(relu(x)), np.array([[2.0, -2.0]]))
    assert np.allclose(g, [[1.0, 0.0]], atol=1e-6)


def test_fd_rejects_nonfinite_and_bad_step():
    with pytest.raises(NumericError):
        finite_difference_gradient(lambda x: np.inf, np.ones((1, 1)))
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, np.ones((1, 1)), step=0)


def test_rng_is_reproducible():
    assert np.array_equal(make_rng(7).standard_normal(5), make_rng(7).standard_normal(5))
    assert not np.array_equal(make_rng(7).standard_normal(5), make_rng(8).standard_normal(5))


@settings(max_examples=50)
@given(arrays(np.float64, (3, 2), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_text_round_trip_is_exact(x):
    assert np.array_equal(parse_matrix(format_matrix(x)), x)


def test_file_round_trip_and_errors(tmp_path, rng):
    x = rng.standard_normal((3, 2))
    save_matrix(x, tmp_path / "m.csv")
    assert np.array_equal(load_matrix(tmp_path / "m.csv"), x)
    with pytest.raises(ValueError, match="bad.csv:2"):
        parse_matrix("1,2\n3,x\n", "bad.csv")
    with pytest.raises(ValueError, match=":2: expected 2 columns"):
        parse_matrix("1,2\n3\n")
