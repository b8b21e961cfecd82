import io
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from drkit import tensor as T
from drkit.errors import NonFiniteError, ShapeError


def test_add_example():
    assert T.elementwise("add", [1, 2], [3, 4]).tolist() == [4, 6]


def test_mul_by_ones_is_identity(nprng):
    x = nprng.normal(size=(3, 4))
    assert np.array_equal(T.elementwise("mul", x, np.ones_like(x)), x)


def test_div_by_zero_raises():
    with pytest.raises(ZeroDivisionError):
        T.elementwise("div", [1.0], [0.0])


def test_unknown_op():
    with pytest.raises(ValueError):
        T.elementwise("pow", [1.0], [2.0])


def test_overflow_is_non_finite():
    with pytest.raises(NonFiniteError):
        T.elementwise("mul", [1e308], [1e308])


def test_broadcast_trailing_only():
    assert T.broadcast_shape((2, 3, 4), (3, 4)) == (2, 3, 4)
    assert T.broadcast_shape((4,), (2, 4)) == (2, 4)
    with pytest.raises(ShapeError):
        T.broadcast_shape((2, 3), (2,))
    with pytest.raises(ShapeError):
        T.elementwise("add", np.ones((2, 3)), np.ones((1, 3)))


def _loop_elementwise(op, a, b):
    out = np.empty(a.shape)
    flat_b = b.reshape(-1)
    for idx, v in enumerate(a.reshape(-1)):
        w = flat_b[idx % flat_b.size]
        out.reshape(-1)[idx] = {"add": v + w, "sub": v - w, "mul": v * w, "max": max(v, w)}[op]
    return out


def test_broadcast_matches_loop_oracle(nprng):
    for _ in range(100):
        lead = tuple(nprng.integers(1, 4, size=nprng.integers(0, 3)))
        tail = tuple(nprng.integers(1, 4, size=nprng.integers(1, 3)))
        a = nprng.normal(size=lead + tail)
        b = nprng.normal(size=tail)
        op = ["add", "sub", "mul", "max"][nprng.integers(4)]
        np.testing.assert_allclose(T.elementwise(op, a, b), _loop_elementwise(op, a, b), atol=1e-10, rtol=0)


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(np.eye(2), m), m)
    assert T.matmul([[1.0, 0.0]], [[0.0], [1.0]]).tolist() == [[0.0]]
    with pytest.raises(ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def _loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_matches_triple_loop(nprng):
    a, b = nprng.normal(size=(5, 7)), nprng.normal(size=(7, 3))
    np.testing.assert_allclose(T.matmul(a, b), _loop_matmul(a, b), atol=1e-12, rtol=0)
    for _ in range(100):
        m, k, n = nprng.integers(1, 6, size=3)
        a, b = nprng.normal(size=(m, k)), nprng.normal(size=(k, n))
        np.testing.assert_allclose(T.matmul(a, b), _loop_matmul(a, b), atol=1e-10, rtol=0)


def _loop_conv(x, w, stride, pad):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for y in range(ho):
                for z in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                s += xp[b, ch, y * stride + i, z * stride + j] * w[o, ch, i, j]
                    out[b, o, y, z] = s
    return out


def test_conv_identity_kernel(nprng):
    x = nprng.normal(size=(2, 1, 5, 6))
    np.testing.assert_array_equal(T.conv2d(x, np.ones((1, 1, 1, 1))), x)


def test_conv_constant_image():
    out = T.conv2d(np.full((1, 1, 6, 6), 2.5), np.ones((1, 1, 3, 3)))
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(out, 22.5, rtol=0, atol=1e-12)


def test_conv_output_size_and_errors():
    assert T.conv_output_size(7, 3, 2, 1) == 4
    with pytest.raises(ShapeError):
        T.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 5, 5)))
    with pytest.raises(ShapeError):
        T.conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 1, 3, 3)))


def test_conv_matches_loop_oracle(nprng):
    for _ in range(100):
        n, c, f = nprng.integers(1, 3, size=3)
        h, w = nprng.integers(3, 7, size=2)
        k = int(nprng.choice([1, 2, 3]))
        stride, pad = int(nprng.integers(1, 3)), int(nprng.integers(0, 2))
        x = nprng.normal(size=(n, c, h, w))
        kern = nprng.normal(size=(f, c, k, k))
        np.testing.assert_allclose(T.conv2d(x, kern, stride, pad), _loop_conv(x, kern, stride, pad), atol=1e-10, rtol=0)


def test_operations_do_not_mutate(nprng):
    a, b = nprng.normal(size=(3, 3)), nprng.normal(size=(3, 3))
    a0, b0 = a.copy(), b.copy()
    T.elementwise("add", a, b)
    T.matmul(a, b)
    T.conv2d(a[None, None], b[None, None], 1, 1)
    assert np.array_equal(a, a0) and np.array_equal(b, b0)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5, 10.0])
def test_gaussian_kernel_normalized_and_symmetric(theta):
    k = T.gaussian_kernel2d(theta)
    assert k.shape == (2 * T.gaussian_radius(theta) + 1,) * 2
    assert abs(k.sum() - 1.0) < 1e-12
    np.testing.assert_array_equal(k, np.rot90(k))


def test_gaussian_center_matches_formula():
    theta, r = 10.0, 30
    k = T.gaussian_kernel2d(theta, r)
    total = sum(np.exp(-(dx * dx + dy * dy) / (2 * theta * theta)) for dx in range(-r, r + 1) for dy in range(-r, r + 1))
    assert abs(k[r, r] - 1.0 / total) < 1e-15


def test_gaussian_errors():
    with pytest.raises(ValueError):
        T.gaussian_kernel2d(0.0)
    with pytest.raises(ValueError):
        T.gaussian_kernel2d(1.0, 0)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_serialization_round_trip(arr):
    buf = io.BytesIO()
    T.write_tensor(buf, arr)
    buf.seek(0)
    back = T.read_tensor(buf)
    assert back.shape == arr.shape and back.dtype == np.float64
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()
    assert T.tensor_from_bytes(T.tensor_to_bytes(arr)).tobytes() == back.tobytes()


def test_serialization_layout():
    data = T.tensor_to_bytes(np.array([[1.0, 2.0]]))
    assert data[:4] == b"DRKT"
    assert data[4:8] == (2).to_bytes(4, "little")
    assert data[8:24] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert np.frombuffer(data[24:], "<f8").tolist() == [1.0, 2.0]


def test_truncated_tensor_rejected():
    with pytest.raises(ValueError):
        T.tensor_from_bytes(T.tensor_to_bytes(np.ones(3))[:-1])


def test_identical_across_processes():
    code = ("from drkit.rng import Rng; from drkit import tensor as T; import numpy as np, hashlib;"
            "r = Rng(42); x = r.normal_array(0, 1, 64).reshape(1, 1, 8, 8);"
            "y = T.conv2d(x, r.normal_array(0, 1, 9).reshape(1, 1, 3, 3), 1, 1);"
            "print(hashlib.sha256(y.tobytes() + r.random_array(100).tobytes()).hexdigest())")
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(outs) == 1
