import numpy as np
import pytest
from hypothesis import given, strategies as st

from scenechar.tensor import (Shape2D, ShapeError, conv_output_shape, dumps_tensor, flat_index,
                              load_tensor, dump_tensor, loads_tensor, matmul, tensor, volume)


def naive_matmul(a, b):
    n, m = len(a), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return out


@pytest.mark.parametrize("shape,f,p,s,expected", [
    ((50, 50), 3, 0, 1, (48, 48)),
    ((5, 5), 5, 0, 1, (1, 1)),
    ((50, 50), 5, 0, 2, (23, 23)),
    ((23, 23), 5, 0, 2, (10, 10)),
    ((8, 8), 3, 1, 2, (4, 4)),
])
def test_conv_output_shape_examples(shape, f, p, s, expected):
    assert conv_output_shape(Shape2D(*shape), f, p, s) == Shape2D(*expected)


def test_conv_output_shape_rejects_oversized_kernel():
    with pytest.raises(ShapeError):
        conv_output_shape(Shape2D(4, 4), 5, 0, 1)
    # padding makes room
    assert conv_output_shape(Shape2D(4, 4), 5, 1, 1) == Shape2D(2, 2)


@pytest.mark.parametrize("f,p,s", [(0, 0, 1), (3, -1, 1), (3, 0, 0)])
def test_conv_output_shape_rejects_bad_hyperparameters(f, p, s):
    with pytest.raises(ShapeError):
        conv_output_shape(Shape2D(10, 10), f, p, s)


@given(st.integers(1, 40), st.integers(1, 7), st.integers(0, 3), st.integers(1, 3))
def test_conv_output_shape_monotonic(dim, f, p, s):
    if f > dim + 2 * p:
        return
    out = conv_output_shape(Shape2D(dim, dim), f, p, s).height
    if f > 1:
        assert conv_output_shape(Shape2D(dim, dim), f - 1, p, s).height >= out
    if s > 1:
        assert conv_output_shape(Shape2D(dim, dim), f, p, s - 1).height >= out
    assert conv_output_shape(Shape2D(dim, dim), f, p + 1, s).height >= out
    if s == 1 and p == 0:
        assert out == dim - f + 1


def test_matmul_identity_and_hand_sum():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)
    assert matmul([[1, 2], [3, 4]], [[1], [1]]).tolist() == [[3.0], [7.0]]


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), rtol=0, atol=1e-12)


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_tensor_invariants():
    t = tensor(range(6), [2, 3])
    assert t.dtype == np.float64 and t.flags.c_contiguous
    assert volume(t.shape) == t.size == 6
    assert t[1, 2] == t.ravel()[flat_index(t.shape, (1, 2))] == 5
    with pytest.raises(ShapeError):
        tensor(range(5), [2, 3])
    with pytest.raises(ShapeError):
        tensor([], [0])


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_reshape_preserves_data(shape):
    n = volume(shape)
    t = tensor(np.arange(n), shape)
    flat = t.reshape(-1)
    assert flat.size == n and np.array_equal(flat, np.arange(n))


def test_volume_is_product_of_extents():
    assert volume((1, 50, 50)) == 2500
    assert volume((16, 48, 48)) == 16 * 48 * 48


def test_dump_round_trip(tmp_path):
    t = np.random.default_rng(0).normal(size=(2, 3, 4))
    text = dumps_tensor(t)
    assert text.startswith("shape: 2 3 4\n")
    assert np.array_equal(loads_tensor(text), t)
    dump_tensor(t, tmp_path / "t.txt")
    assert np.array_equal(load_tensor(tmp_path / "t.txt"), t)
