"""Tensor ops, reverse-mode gradients and the fused layer primitives."""

import math

import numpy as np
import pytest

from ssdposer.nn import (NonFiniteError, Tensor, concat, cross, default_dtype, exp,
                         get_default_dtype, log, matmul, mean, no_grad, norm, relu,
                         sigmoid, softplus, split, sqrt, stack, sum_)
from ssdposer.nn import functional as F
from ssdposer.nn.gradcheck import check_gradients


def _leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_projector(self):
        out = matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.data, [[5], [0]])

    def test_triple_loop_oracle(self, rng):
        a = rng.standard_normal((4, 3)).astype(np.float32)
        b = rng.standard_normal((3, 2)).astype(np.float32)
        ref = np.zeros((4, 2))
        for i in range(4):
            for j in range(2):
                for k in range(3):
                    ref[i, j] += float(a[i, k]) * float(b[k, j])
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, ref, atol=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv1d:
    def test_unit_kernel_is_identity(self, rng):
        x = rng.standard_normal((6, 3)).astype(np.float32)
        out = F.conv1d_time(Tensor(x), Tensor(np.eye(3, dtype=np.float32)[None]))
        np.testing.assert_array_equal(out.data, x)

    def test_impulse_reproduces_taps(self):
        taps = np.array([1.0, 2.0, 3.0, 4.0, 5.0], dtype=np.float32)
        x = np.zeros((9, 1), dtype=np.float32)
        x[4] = 1.0
        out = F.conv1d_time(Tensor(x), Tensor(taps[:, None, None]), padding="same")
        # correlation: output at t reads x[t + k - 2], so the taps appear reversed
        np.testing.assert_array_equal(out.data[2:7, 0], taps[::-1])
        assert not out.data[:2].any() and not out.data[7:].any()

    def test_direct_sum_oracle(self, rng):
        T, k, ci, co = 8, 5, 3, 4
        x = rng.standard_normal((T, ci))
        w = rng.standard_normal((k, ci, co))
        b = rng.standard_normal(co)
        ref = np.tile(b, (T, 1))
        for t in range(T):
            for j in range(k):
                s = t + j - k // 2
                if 0 <= s < T:
                    ref[t] += x[s] @ w[j]
        out = F.conv1d_time(Tensor(x.astype(np.float32)), Tensor(w.astype(np.float32)),
                            Tensor(b.astype(np.float32)))
        assert np.abs(out.data - ref).max() / np.abs(ref).max() <= 1e-6

    def test_causal_depthwise_ignores_future(self, rng):
        x = rng.standard_normal((10, 3))
        w = rng.standard_normal((4, 3))
        with default_dtype(np.float64):
            base = F.depthwise_conv1d_time(Tensor(x), Tensor(w)).data
            x2 = x.copy()
            x2[6:] += 1.0
            moved = F.depthwise_conv1d_time(Tensor(x2), Tensor(w)).data
        np.testing.assert_array_equal(base[:6], moved[:6])
        ref = np.array([[sum(w[j, c] * x[t - 3 + j, c] for j in range(4) if t - 3 + j >= 0)
                         for c in range(3)] for t in range(10)])
        np.testing.assert_allclose(base, ref, atol=1e-12)

    def test_even_kernel_same_padding_rejected(self):
        with pytest.raises(ValueError):
            F.conv1d_time(Tensor(np.ones((4, 1))), Tensor(np.ones((4, 1, 1))), padding="same")


class TestLayerNorm:
    def test_constant_row(self):
        out = F.layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_already_normalized(self):
        out = F.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-7)

    def test_direct_formula(self, rng):
        x = rng.standard_normal((3, 7))
        g, b = rng.standard_normal(7), rng.standard_normal(7)
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        ref = (x - mu) / np.sqrt(var + 1e-5) * g + b
        out = F.layer_norm(Tensor(x.astype(np.float32)), Tensor(g.astype(np.float32)), Tensor(b.astype(np.float32)))
        np.testing.assert_allclose(out.data, ref, atol=1e-5)


class TestActivations:
    def test_silu_values(self):
        out = F.silu(Tensor([0.0, 1.0, 30.0])).data
        assert out[0] == 0.0
        assert out[1] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-7)
        assert out[1] == pytest.approx(0.731058, abs=1e-6)
        assert out[2] == pytest.approx(30.0, rel=1e-6)

    def test_softmax_rows_sum_to_one(self, rng):
        out = F.softmax(Tensor(rng.standard_normal((5, 9)) * 10)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_softmax_singleton(self):
        assert F.softmax(Tensor([[3.5]])).data[0, 0] == 1.0

    def test_softplus_large_inputs_stay_finite(self):
        out = softplus(Tensor([-200.0, 0.0, 200.0])).data
        np.testing.assert_allclose(out, [0.0, math.log(2.0), 200.0], atol=1e-6)


class TestBackward:
    def test_sum_gives_ones(self):
        W = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        sum_(W).backward()
        np.testing.assert_array_equal(W.grad, np.ones((2, 3)))

    def test_quadratic_form(self, f64, rng):
        W, x = _leaf(rng, 3, 4), Tensor(rng.standard_normal((4, 1)))
        res = check_gradients(lambda: sum_((W @ x) * (W @ x)), [W])
        assert res.rel_error <= 1e-4

    def test_fan_out_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_trapped(self):
        with pytest.raises(NonFiniteError):
            log(Tensor([-1.0]))
        with pytest.raises(NonFiniteError):
            Tensor([1.0]) / Tensor([0.0])

    def test_default_dtype_switch(self):
        assert get_default_dtype() == np.float32
        with default_dtype(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32


# each case: (name, builder(rng) -> (loss_fn, leaves))
def _case_binary(op):
    def build(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4, low=0.5, high=1.5)
        return (lambda: sum_(op(a, b) * Tensor(np.linspace(-1, 1, 12).reshape(3, 4)))), [a, b]
    return build


def _case_unary(op, low=-1.0, high=1.0):
    def build(rng):
        a = _leaf(rng, 2, 5, low=low, high=high)
        w = Tensor(rng.standard_normal((2, 5)))
        return (lambda: sum_(op(a) * w)), [a]
    return build


def _weighted(out, rng_seed=0):
    w = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return sum_(out * Tensor(w))


def _case_linear(rng):
    x, W, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    return (lambda: _weighted(F.linear(x, W, b))), [x, W, b]


def _case_layer_norm(rng):
    x, g, b = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    return (lambda: _weighted(F.layer_norm(x, g, b))), [x, g, b]


def _case_conv_same(rng):
    x, w, b = _leaf(rng, 2, 7, 3), _leaf(rng, 5, 3, 2), _leaf(rng, 2)
    return (lambda: _weighted(F.conv1d_time(x, w, b, padding="same"))), [x, w, b]


def _case_depthwise(rng):
    x, w, b = _leaf(rng, 2, 7, 3), _leaf(rng, 4, 3), _leaf(rng, 3)
    return (lambda: _weighted(F.depthwise_conv1d_time(x, w, b))), [x, w, b]


def _case_attention(rng):
    q, k, v = _leaf(rng, 5, 4), _leaf(rng, 5, 4), _leaf(rng, 5, 4)
    return (lambda: _weighted(F.scaled_dot_attention(q, k, v, heads=2)[0])), [q, k, v]


def _case_softmax(rng):
    a = _leaf(rng, 3, 5)
    return (lambda: _weighted(F.softmax(a))), [a]


def _case_norm(rng):
    a = _leaf(rng, 4, 3)
    return (lambda: _weighted(norm(a))), [a]


def _case_cross(rng):
    a, b = _leaf(rng, 4, 3), _leaf(rng, 4, 3)
    return (lambda: _weighted(cross(a, b))), [a, b]


def _case_shapes(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    def loss():
        joined = concat([a, b], axis=-1)
        p, q = split(joined, [1, 4], axis=-1)
        s = stack([p[:, 0], q[:, 2]], axis=0)
        return _weighted(s.T.reshape(4) * mean(joined))
    return loss, [a, b]


def _case_broadcast(rng):
    a, b = _leaf(rng, 3, 1), _leaf(rng, 4)
    return (lambda: _weighted(a * b + b)), [a, b]


def _case_getitem(rng):
    a = _leaf(rng, 4, 5)
    idx = np.array([0, 2, 2, 3])
    return (lambda: _weighted(a[idx, 1:4] + a[1:, ::2].sum())), [a]


GRAD_CASES = {
    "add": _case_binary(lambda a, b: a + b),
    "sub": _case_binary(lambda a, b: a - b),
    "mul": _case_binary(lambda a, b: a * b),
    "div": _case_binary(lambda a, b: a / b),
    "pow": _case_unary(lambda a: a ** 3),
    "neg": _case_unary(lambda a: -a),
    "exp": _case_unary(exp),
    "log": _case_unary(log, 0.5, 2.0),
    "sqrt": _case_unary(sqrt, 0.5, 2.0),
    "relu": _case_unary(relu),
    "sigmoid": _case_unary(sigmoid),
    "softplus": _case_unary(softplus),
    "silu": _case_unary(F.silu),
    "matmul": lambda rng: (lambda a, b: ((lambda: _weighted(a @ b)), [a, b]))(_leaf(rng, 2, 3, 4), _leaf(rng, 4, 2)),
    "linear": _case_linear,
    "layer_norm": _case_layer_norm,
    "conv1d_same": _case_conv_same,
    "depthwise_causal": _case_depthwise,
    "attention": _case_attention,
    "softmax": _case_softmax,
    "norm": _case_norm,
    "cross": _case_cross,
    "concat_split_stack": _case_shapes,
    "broadcast": _case_broadcast,
    "getitem": _case_getitem,
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradients_match_finite_differences(name, f64):
    loss_fn, leaves = GRAD_CASES[name](np.random.default_rng(7))
    res = check_gradients(loss_fn, leaves)
    assert res.rel_error <= 1e-4, f"{name}: rel. err {res.rel_error:.2e}"
