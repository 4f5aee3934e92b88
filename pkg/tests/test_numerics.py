import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from litetok.errors import ContractError, DimensionError, NumericError, ShapeError
from litetok.numerics import (
    Tape, Tensor, backward, depthwise_conv1d, finite_difference_check, layer_norm, ltf, matmul,
    mse, precision, softmax_last_axis, clamp_abs, gelu, take, concat,
)


def triple_loop_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(n)] for i in range(m)]


def direct_conv(x, kern, stride):
    # x: list of floats, single channel, reflective boundary, centred windows
    n, k = len(x), len(kern)
    pad = k // 2
    out = []
    for c in range(0, n, stride):
        acc = 0.0
        for j in range(k):
            i = c + j - pad
            if i < 0:
                i = -i
            if i >= n:
                i = 2 * (n - 1) - i
            acc += kern[j] * x[i]
        out.append(acc)
    return out


def two_pass_layer_norm(row, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((v - mu) ** 2 for v in row) / len(row)
    return [(v - mu) / math.sqrt(var + eps) for v in row]


# matmul

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_matches_triple_loop():
    a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
    expected = triple_loop_matmul(a, b)
    assert expected == [[19, 22], [43, 50]]
    np.testing.assert_array_equal(matmul(Tensor(a), Tensor(b)).data, expected)


def test_matmul_random_against_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 4))
    expected = triple_loop_matmul(a.tolist(), b.tolist())
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=1e-5, atol=1e-5)


def test_matmul_dimension_error():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


# softmax

@pytest.mark.parametrize("c", [-50.0, 0.0, 3.5, 1e4])
def test_softmax_uniform(c):
    np.testing.assert_allclose(softmax_last_axis(Tensor([c] * 4)).data, [0.25] * 4, atol=1e-7)


def test_softmax_analytic():
    y = softmax_last_axis(Tensor([0.0, math.log(3.0)])).data
    np.testing.assert_allclose(y, [0.25, 0.75], atol=1e-7)


def test_softmax_nan():
    with pytest.raises(NumericError):
        softmax_last_axis(Tensor([0.0, float("nan")]))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-30, 30)),
       st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(x, c):
    y = softmax_last_axis(Tensor(x)).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
    y2 = softmax_last_axis(Tensor(x + c)).data
    np.testing.assert_allclose(y, y2, atol=1e-6)


# depthwise conv

def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(7, 3)))
    k = Tensor(np.tile([[0.0], [1.0], [0.0]], (1, 3)))
    np.testing.assert_array_equal(depthwise_conv1d(x, k).data, x.data)


def test_conv_preserves_constant():
    x = Tensor(np.full((6, 2), 2.5))
    k = Tensor([[0.2, 0.5], [0.3, 0.25], [0.5, 0.25]])
    np.testing.assert_allclose(depthwise_conv1d(x, k).data, 2.5, atol=1e-6)


def test_conv_strided_direct_sum():
    expected = direct_conv([1, 2, 3, 4], [1 / 3] * 3, 2)
    assert expected == pytest.approx([5 / 3, 3.0])
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    k = Tensor(np.full((3, 1), 1 / 3))
    out = depthwise_conv1d(x, k, stride=2, padding="valid-strided")
    np.testing.assert_allclose(out.data[:, 0], expected, atol=1e-6)


def test_conv_random_against_direct_sum():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    kern = rng.normal(size=(5, 3))
    for stride, mode in [(1, "same"), (2, "valid-strided"), (4, "valid-strided")]:
        out = depthwise_conv1d(Tensor(x), Tensor(kern), stride, mode).data
        for ch in range(3):
            ref = direct_conv(x[:, ch].tolist(), kern[:, ch].tolist(), stride)
            np.testing.assert_allclose(out[:, ch], ref, atol=1e-5)


def test_conv_along_inner_axis():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 6, 3, 4))
    kern = rng.normal(size=(3, 4))
    out = depthwise_conv1d(Tensor(x), Tensor(kern), 2, "valid-strided", axis=1).data
    assert out.shape == (2, 3, 3, 4)
    for a in range(2):
        for b in range(3):
            for ch in range(4):
                ref = direct_conv(x[a, :, b, ch].tolist(), kern[:, ch].tolist(), 2)
                np.testing.assert_allclose(out[a, :, b, ch], ref, atol=1e-5)


def test_conv_not_divisible():
    with pytest.raises(ShapeError):
        depthwise_conv1d(Tensor(np.zeros((5, 1))), Tensor(np.ones((3, 1))), 2, "valid-strided")


# layer norm

def test_layer_norm_constant_maps_to_zero():
    out = layer_norm(Tensor(np.full((3, 4), 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_layer_norm_two_pass_oracle():
    expected = two_pass_layer_norm([1.0, 2.0, 3.0])
    out = layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    np.testing.assert_allclose(out, expected, atol=1e-6)
    assert expected[0] == pytest.approx(-math.sqrt(1.5), rel=1e-4)


def test_layer_norm_moments():
    rng = np.random.default_rng(4)
    x = rng.normal(3.0, 5.0, size=(10, 16))
    out = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data.astype(np.float64)
    assert np.abs(out.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.var(axis=-1) - 1).max() < 1e-4


# backward

def test_backward_mse_closed_form():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)))
    with Tape() as tape:
        loss = mse(a, b)
    backward(loss, tape)
    np.testing.assert_allclose(a.grad, 2 * (a.data - b.data) / 12, rtol=1e-5, atol=1e-7)


def test_backward_sum_matmul_closed_form():
    rng = np.random.default_rng(6)
    A = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    B = Tensor(rng.normal(size=(4, 2)))
    with Tape() as tape:
        loss = matmul(A, B).sum()
    backward(loss, tape)
    np.testing.assert_allclose(A.grad, np.ones((3, 2)) @ B.data.T, rtol=1e-5)


def test_backward_fan_out_accumulates():
    rng = np.random.default_rng(7)
    a = Tensor(rng.normal(size=5), requires_grad=True)
    with Tape() as tape:
        loss = ((a * a) * 3.0).sum()
    backward(loss, tape)
    once = a.grad.copy()
    a.grad = None
    with Tape() as tape:
        s = a * a * 3.0
        loss = (s + s).sum()
    backward(loss, tape)
    np.testing.assert_allclose(a.grad, 2 * once, rtol=1e-6)


def test_backward_requires_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = a * 2.0
    with pytest.raises(ContractError):
        backward(y, tape)


def test_no_tape_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        pass
    (a * 2.0).sum()
    assert len(tape) == 0


def test_tape_reverse_order():
    a = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        b = a * 2.0
        c = b + 1.0
        d = c.sum()
    assert [n.out for n in tape.nodes] == [b, c, d]


# finite-difference checker

def test_fd_quadratic():
    with precision(np.float64):
        x = Tensor([3.0])
        err = finite_difference_check(lambda: (x * x).sum(), [x], 1e-3)
    assert err < 1e-6


def test_fd_linear():
    with precision(np.float64):
        x = Tensor([1.0, -2.0, 0.5])
        w = np.array([0.3, 1.5, -2.0])
        err = finite_difference_check(lambda: (x * w).sum(), [x], 1e-3)
    assert err < 1e-9


def test_fd_nan_raises():
    x = Tensor([1.0])
    with pytest.raises(NumericError):
        finite_difference_check(lambda: (x * float("nan")).sum(), [x], 1e-3)


def _fd(f, params):
    return finite_difference_check(f, params, h=1e-3)


def test_fd_matmul_softmax_layernorm_tight():
    rng = np.random.default_rng(8)
    with precision(np.float64):
        A = Tensor(rng.normal(size=(3, 4)))
        B = Tensor(rng.normal(size=(4, 5)))
        w = rng.normal(size=(3, 5))
        assert _fd(lambda: (matmul(A, B) * w).sum(), [A, B]) < 1e-4

        x = Tensor(rng.normal(size=(2, 6)))
        w2 = rng.normal(size=(2, 6))
        assert _fd(lambda: (softmax_last_axis(x) * w2).sum(), [x]) < 1e-4

        x3 = Tensor(rng.normal(size=(3, 5)))
        g = Tensor(rng.normal(size=5))
        b = Tensor(rng.normal(size=5))
        w3 = rng.normal(size=(3, 5))
        assert _fd(lambda: (layer_norm(x3, g, b) * w3).sum(), [x3, g, b]) < 1e-4


def test_fd_other_ops():
    rng = np.random.default_rng(9)
    with precision(np.float64):
        x = Tensor(rng.normal(size=(6, 2, 3)))
        k = Tensor(rng.normal(size=(3, 3)))
        w = rng.normal(size=(3, 2, 3))
        assert _fd(lambda: (depthwise_conv1d(x, k, 2, "valid-strided") * w).sum(), [x, k]) < 1e-3
        w1 = rng.normal(size=(6, 2, 3))
        assert _fd(lambda: (depthwise_conv1d(x, k, 1, "same", axis=0) * w1).sum(), [x, k]) < 1e-3

        y = Tensor(rng.normal(size=(4, 3)))
        wy = rng.normal(size=(4, 3))
        assert _fd(lambda: (gelu(y) * wy).sum(), [y]) < 1e-3
        idx = np.array([[0, 2], [2, 3]])
        wt = rng.normal(size=(2, 2, 3))
        assert _fd(lambda: (take(y, idx, 0) * wt).sum(), [y]) < 1e-3
        z = Tensor(rng.normal(size=(2, 3)))
        wc = rng.normal(size=(6, 3))
        assert _fd(lambda: (concat([y, z], 0) * wc).sum(), [y, z]) < 1e-3
        wp = rng.normal(size=(3, 4))
        assert _fd(lambda: (y.transpose(1, 0) * wp).sum() + (y[1:3] * y[0:2]).sum(), [y]) < 1e-3

        v = Tensor(np.array([0.1, -2.0, 0.5, 3.0]))
        bound = Tensor(np.array(1.0))
        assert _fd(lambda: (clamp_abs(v, bound) ** 2).sum(), [v, bound]) < 1e-3


def test_determinism_bit_identical():
    rng = np.random.default_rng(10)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    out1 = softmax_last_axis(matmul(Tensor(a), Tensor(b))).data
    out2 = softmax_last_axis(matmul(Tensor(a), Tensor(b))).data
    assert out1.tobytes() == out2.tobytes()


# LTF1

def test_ltf_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    arr = rng.normal(size=(2, 3, 4)).astype(np.float32)
    path = tmp_path / "a.ltf"
    ltf.save(path, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"LTF1"
    assert len(raw) == 4 + 4 + 3 * 8 + arr.size * 4
    back = ltf.load(path)
    assert back.tobytes() == arr.tobytes() and back.shape == arr.shape


def test_ltf_bad_magic():
    with pytest.raises(DimensionError):
        ltf.decode(b"XXXX" + bytes(8))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_ltf_round_trip_property(arr):
    back = ltf.decode(ltf.encode(arr))
    assert back.tobytes() == arr.tobytes()
