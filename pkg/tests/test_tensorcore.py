import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fvlab import _kernels
from fvlab.tensorcore import (ExprGraph, NonFiniteError, ShapeError, Tensor, evaluate, finite_diff, forward_eval,
                              reverse_grad)
from gradcheck import PRIMITIVES, check_primitive


def _unary(op, x):
    g = ExprGraph()
    a = g.input("x", np.shape(x))
    g.output("y", getattr(g, op)(a))
    return forward_eval(g, {"x": x})["y"].numpy()


def test_relu_values():
    assert _unary("relu", np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]


def test_valid_conv_dot_product():
    g = ExprGraph()
    x = g.input("x", (1, 1, 2, 2))
    w = g.const(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]))
    g.output("y", g.conv2d(x, w))
    out = forward_eval(g, {"x": np.array([[[[1.0, 2.0], [3.0, 4.0]]]])})["y"].numpy()
    assert out.shape == (1, 1, 1, 1) and out.item() == 5.0


def test_matmul_identity():
    x = np.arange(6.0).reshape(2, 3)
    g = ExprGraph()
    a = g.input("x", (2, 3))
    g.output("y", g.matmul(a, g.const(np.eye(3))))
    assert np.array_equal(forward_eval(g, {"x": x})["y"].numpy(), x)


def test_square_gradient():
    g = ExprGraph()
    x = g.input("x", (1, 1))
    g.output("y", g.matmul(x, x))
    assert reverse_grad(g, {"x": [[3.0]]}, "y", "x").item() == 6.0


@pytest.mark.parametrize("value", [-1.0, 0.0])
def test_relu_subgradient_zero(value):
    g = ExprGraph()
    x = g.input("x", (1, 1))
    g.output("y", g.relu(x))
    assert reverse_grad(g, {"x": [[value]]}, "y", "x").item() == 0.0


def test_reverse_grad_needs_scalar():
    g = ExprGraph()
    x = g.input("x", (2, 2))
    g.output("y", g.relu(x))
    with pytest.raises(ShapeError):
        reverse_grad(g, {"x": np.ones((2, 2))}, "y", "x")


def test_finite_diff_examples():
    assert abs(finite_diff(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-4).numpy()[0] - 6.0) <= 1e-6
    assert np.all(finite_diff(lambda x: 4.2, np.ones(5)).numpy() == 0)
    g = finite_diff(lambda x: float(np.sum(x)), np.random.default_rng(0).standard_normal(7)).numpy()
    assert np.allclose(g, 1.0, atol=1e-8)
    with pytest.raises(ValueError):
        finite_diff(lambda x: 0.0, np.ones(2), 0.0)


def test_conv_gradient_on_6x6_input(rng):
    g = ExprGraph()
    x = g.input("x", (1, 1, 6, 6))
    w = g.const(rng.standard_normal((2, 1, 3, 3)))
    conv = g.conv2d(x, w, padding=1)
    r = g.const(rng.standard_normal((72, 1)))
    g.output("y", g.matmul(g.reshape(conv, (1, 72)), r))
    point = rng.standard_normal((1, 1, 6, 6))
    an = reverse_grad(g, {"x": point}, "y", "x").numpy()
    num = finite_diff(lambda v: forward_eval(g, {"x": v})["y"].item(), point, 1e-4).numpy()
    assert np.linalg.norm(an - num) / np.linalg.norm(num) <= 1e-4


@pytest.mark.parametrize("prim", PRIMITIVES)
def test_gradients_match_finite_differences(prim):
    assert max(check_primitive(prim, s) for s in range(20)) <= 1e-4


def test_shape_errors_at_construction():
    g = ExprGraph()
    a = g.input("a", (2, 3))
    b = g.input("b", (2, 3))
    with pytest.raises(ShapeError):
        g.matmul(a, b)
    x = g.input("x", (1, 2, 4, 4))
    with pytest.raises(ShapeError):
        g.conv2d(x, g.const(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        g.conv2d(x, g.const(np.ones((1, 2, 5, 5))))


def test_binding_shape_mismatch_names_input():
    g = ExprGraph()
    x = g.input("pixels", (1, 3))
    g.output("y", g.relu(x))
    with pytest.raises(ShapeError, match="pixels"):
        forward_eval(g, {"pixels": np.ones((1, 4))})


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    g = ExprGraph()
    x = g.input("x", (1, 1))
    g.output("y", g.scale(x, 1e308))
    with pytest.raises(NonFiniteError):
        forward_eval(g, {"x": [[1e10]]})


def test_tensor_precision_tag():
    assert Tensor(np.ones(2, np.float32)).precision == "f32"
    assert Tensor([1.0]).precision == "f64"
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 2)))


@given(st.integers(0, 2**31 - 1))
def test_forward_is_deterministic(seed):
    r = np.random.default_rng(seed)
    g = ExprGraph()
    x = g.input("x", (2, 2, 5, 5))
    c = g.conv2d(x, g.const(r.standard_normal((3, 2, 3, 3))), stride=2, padding=1)
    g.output("y", g.mean(g.relu(c), [1, 2, 3]))
    v = r.standard_normal((2, 2, 5, 5))
    a, b = evaluate(g, {"x": v}), evaluate(g, {"x": v})
    assert all(np.array_equal(p, q) for p, q in zip(a.values, b.values))


@given(st.integers(1, 3), st.integers(0, 2), st.integers(3, 7), st.integers(0, 2**31 - 1))
def test_kernel_backends_agree(stride, pad, size, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, size, size))
    w = r.standard_normal((4, 3, 3, 3))
    if _kernels.conv_out_size(size, 3, stride, pad) < 1:
        return
    a = _kernels.conv2d_forward(x, w, stride, pad, backend="numpy")
    b = _kernels.conv2d_forward(x, w, stride, pad, backend="numba")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    gout = r.standard_normal(a.shape)
    for p, q in zip(_kernels.conv2d_backward(gout, x, w, stride, pad, backend="numpy"),
                    _kernels.conv2d_backward(gout, x, w, stride, pad, backend="numba")):
        assert np.allclose(p, q, rtol=1e-12, atol=1e-12)
    cols = _kernels.im2col(x, 3, 3, stride, pad, backend="numpy")
    assert np.array_equal(cols, _kernels.im2col(x, 3, 3, stride, pad, backend="numba"))
    assert np.allclose(_kernels.col2im(cols, x.shape, 3, 3, stride, pad, backend="numpy"),
                       _kernels.col2im(cols, x.shape, 3, 3, stride, pad, backend="numba"), atol=1e-12)


def test_backend_env_var(monkeypatch):
    monkeypatch.setenv("FVLAB_KERNELS", "numpy")
    assert _kernels._requested_backend() == "numpy"
    monkeypatch.setenv("FVLAB_KERNELS", "fortran")
    with pytest.raises(ValueError):
        _kernels._requested_backend()
