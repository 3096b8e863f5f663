"""Network components against oracles composed from plain numpy."""

import numpy as np
import pytest

from ssdposer.kinematics import IDENTITY_6D
from ssdposer.model import ModelConfig, SSDPoser
from ssdposer.nn import Tensor, default_dtype, no_grad, sum_
from ssdposer.nn.gradcheck import check_gradients
from ssdposer.ssd import SsdInputs, ssd_recurrent

TINY = dict(T=4, E=8, I=1, heads=2, N_state=4, ffn_hidden=16)


# -- numpy oracle ------------------------------------------------------------

def np_ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_silu(x):
    return x / (1 + np.exp(-x))


def np_softplus(x):
    return np.log1p(np.exp(x))


def np_causal_depthwise(x, w, b):
    k = w.shape[0]
    out = np.tile(b, (x.shape[0], 1)).astype(float)
    for t in range(x.shape[0]):
        for j in range(k):
            s = t - (k - 1) + j
            if s >= 0:
                out[t] += w[j] * x[s]
    return out


def np_conv_same(x, w, b):
    k = w.shape[0]
    out = np.tile(b, (x.shape[0], 1)).astype(float)
    for t in range(x.shape[0]):
        for j in range(k):
            s = t + j - k // 2
            if 0 <= s < x.shape[0]:
                out[t] += x[s] @ w[j]
    return out


def np_softmax(z):
    z = np.exp(z - z.max(-1, keepdims=True))
    return z / z.sum(-1, keepdims=True)


def oracle_pssb(P, V, i, E, N):
    p = f"blocks.{i}.pssb"
    u = np_ln(V, P[f"{p}.norm.gain"], P[f"{p}.norm.bias"])
    z = u @ P[f"{p}.in_proj.weight"] + P[f"{p}.in_proj.bias"]
    xbc, skip, gate, step = z[:, :E + 2 * N], z[:, E + 2 * N:2 * E + 2 * N], z[:, 2 * E + 2 * N:3 * E + 2 * N], z[:, -1]
    xbc = np_silu(np_causal_depthwise(xbc, P[f"{p}.conv.weight"], P[f"{p}.conv.bias"]))
    y1, B, C = xbc[:, :E], xbc[:, E:E + N], xbc[:, E + N:]
    delta = np_softplus(step + P[f"{p}.step_bias"][0])
    A = np.exp(-np_softplus(P[f"{p}.decay_rate"][0]) * delta)
    y2 = ssd_recurrent(SsdInputs(A, B, C, y1 + skip))
    y3 = np_silu(gate)
    h = np_ln(y2 * y3, P[f"{p}.out_norm.gain"], P[f"{p}.out_norm.bias"])
    return h @ P[f"{p}.out_proj.weight"] + P[f"{p}.out_proj.bias"] + V


def oracle_attention(P, Y, i, heads):
    a = f"blocks.{i}.attn"
    E = Y.shape[-1]
    d = E // heads
    qkv = np_ln(Y, P[f"{a}.norm1.gain"], P[f"{a}.norm1.bias"]) @ P[f"{a}.qkv.weight"] + P[f"{a}.qkv.bias"]
    q, k, v = qkv[:, :E], qkv[:, E:2 * E], qkv[:, 2 * E:]
    ctx = np.zeros_like(Y)
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        w = np_softmax(q[:, sl] @ k[:, sl].T / np.sqrt(d))
        ctx[:, sl] = w @ v[:, sl]
    Y = Y + ctx @ P[f"{a}.out.weight"] + P[f"{a}.out.bias"]
    hid = np.maximum(np_ln(Y, P[f"{a}.norm2.gain"], P[f"{a}.norm2.bias"]) @ P[f"{a}.fc1.weight"] + P[f"{a}.fc1.bias"], 0)
    return Y + hid @ P[f"{a}.fc2.weight"] + P[f"{a}.fc2.bias"]


def oracle_fafe(P, X):
    f2 = np_silu(X @ P["fad.conv1.weight"][0] + P["fad.conv1.bias"]) * X
    f3 = np_silu(np_conv_same(X, P["fad.conv5.weight"], P["fad.conv5.bias"])) + X
    return np.concatenate([X, f2, f3], axis=-1)


def oracle_forward(model, n):
    P = {k: v.data.astype(np.float64) for k, v in model.params.items()}
    c = model.cfg
    V = n @ P["bfe.weight"] + P["bfe.bias"] + P["pos_embed"][:n.shape[0]]
    for i in range(c.I):
        V = oracle_attention(P, oracle_pssb(P, V, i, c.E, c.N_state), i, c.heads)
    Xm = np_ln(V, P["fad.norm_in.gain"], P["fad.norm_in.bias"])
    M = np_ln(oracle_fafe(P, Xm), P["fad.norm_out.gain"], P["fad.norm_out.bias"]) @ P["fad.out.weight"] + P["fad.out.bias"]
    return M.reshape(n.shape[0], 22, 6)


def _model(seed=0, **over):
    with default_dtype(np.float64):
        return SSDPoser(ModelConfig(**{**TINY, **over}), seed=seed)


def _randomize(model, rng, scale=0.3):
    """Move every parameter off its structured init so the oracle sees generic values."""
    for _, p in model.params.items():
        p.data = p.data + scale * rng.standard_normal(p.shape)


# -- tests -------------------------------------------------------------------

@pytest.fixture(autouse=True)
def _float64(f64):
    yield


class TestBaseFeatures:
    def test_zero_input(self):
        m = _model()
        m.params["bfe.bias"].data[:] = 0
        assert not m.bfe(np.zeros((4, 54))).data.any()

    def test_identity_probe(self, rng):
        m = _model(E=54, heads=2)
        m.params["bfe.weight"].data = np.eye(54)
        m.params["bfe.bias"].data[:] = 0
        m.params["pos_embed"].data[:] = 0
        n = rng.standard_normal((4, 54))
        np.testing.assert_array_equal(m.embed(n).data, n)

    def test_matmul_oracle(self, rng):
        m = _model()
        n = rng.standard_normal((4, 54))
        ref = n @ m.params["bfe.weight"].data + m.params["bfe.bias"].data
        np.testing.assert_allclose(m.bfe(n).data, ref, atol=1e-6)

    def test_wrong_width(self):
        with pytest.raises(ValueError):
            _model().bfe(np.zeros((4, 50)))


class TestPSSB:
    def test_residual_probe(self, rng):
        m = _model()
        m.params["blocks.0.pssb.out_proj.weight"].data[:] = 0
        m.params["blocks.0.pssb.out_proj.bias"].data[:] = 0
        V = rng.standard_normal((4, 8))
        np.testing.assert_array_equal(m.pssb(V, 0).data, V)

    def test_gate_annihilates(self, rng):
        m = _model()
        E, N = 8, 4
        # zero the gate columns of the input projection: SiLU(0) = 0
        m.params["blocks.0.pssb.in_proj.weight"].data[:, 2 * E + 2 * N:3 * E + 2 * N] = 0
        m.params["blocks.0.pssb.in_proj.bias"].data[2 * E + 2 * N:3 * E + 2 * N] = 0
        V = rng.standard_normal((4, E))
        out = m.pssb(V, 0).data - V
        np.testing.assert_allclose(out, m.params["blocks.0.pssb.out_proj.bias"].data[None].repeat(4, 0), atol=1e-12)

    def test_composed_oracle(self, rng):
        m = _model()
        _randomize(m, rng)
        V = rng.standard_normal((4, 8))
        P = {k: v.data for k, v in m.params.items()}
        np.testing.assert_allclose(m.pssb(V, 0).data, oracle_pssb(P, V, 0, 8, 4), atol=1e-6)

    def test_causal(self, rng):
        m = _model(T=8)
        V = rng.standard_normal((8, 8))
        V2 = V.copy()
        V2[5:] += 1.0
        np.testing.assert_array_equal(m.pssb(V, 0).data[:5], m.pssb(V2, 0).data[:5])

    def test_decay_in_unit_interval(self, rng):
        m = _model()
        for _ in range(20):
            m.params["blocks.0.pssb.step_bias"].data = rng.normal(0, 5, size=1)
            sp = np_softplus(m.params["blocks.0.pssb.step_bias"].data[0])
            A = np.exp(-np_softplus(m.params["blocks.0.pssb.decay_rate"].data[0]) * sp)
            assert 0 < A < 1

    def test_gradients(self, rng):
        with default_dtype(np.float64):
            m = _model()
            _randomize(m, rng, 0.1)
            V = Tensor(rng.standard_normal((2, 4, 8)))
            w = Tensor(rng.standard_normal((2, 4, 8)))
            named = {k: p for k, p in m.params.items() if k.startswith("blocks.0.pssb")}
            res = check_gradients(lambda: sum_(m.pssb(V, 0) * w), named, samples=40, rng=rng)
        assert res.rel_error <= 1e-4


class TestAttention:
    def test_singleton_weight(self, rng):
        m = _model()
        _, weights = m.attention(rng.standard_normal((1, 8)), 0, return_weights=True)
        np.testing.assert_allclose(weights.data, 1.0)

    def test_rows_sum_to_one(self, rng):
        m = _model(T=6)
        _, weights = m.attention(rng.standard_normal((6, 8)) * 5, 0, return_weights=True)
        np.testing.assert_allclose(weights.data.sum(-1), 1.0, atol=1e-12)

    def test_single_head_oracle(self, rng):
        m = _model(T=3, E=4, heads=1)
        _randomize(m, rng)
        Y = rng.standard_normal((3, 4))
        P = {k: v.data for k, v in m.params.items()}
        np.testing.assert_allclose(m.attention(Y, 0).data, oracle_attention(P, Y, 0, 1), atol=1e-6)

    def test_multi_head_oracle(self, rng):
        m = _model()
        _randomize(m, rng)
        Y = rng.standard_normal((4, 8))
        P = {k: v.data for k, v in m.params.items()}
        np.testing.assert_allclose(m.attention(Y, 0).data, oracle_attention(P, Y, 0, 2), atol=1e-6)


class TestDecoder:
    def test_fafe_zero(self):
        m = _model()
        for k in ("fad.conv1.bias", "fad.conv5.bias"):
            m.params[k].data[:] = 0
        assert not m.fafe(np.zeros((4, 8))).data.any()

    @pytest.mark.parametrize("E", [2, 8, 12])
    def test_fafe_width(self, E, rng):
        m = _model(E=E, heads=2)
        assert m.fafe(rng.standard_normal((4, E))).shape == (4, 3 * E)

    def test_fafe_oracle(self, rng):
        m = _model(T=6)
        _randomize(m, rng)
        X = rng.standard_normal((6, 8))
        P = {k: v.data for k, v in m.params.items()}
        np.testing.assert_allclose(m.fafe(X).data, oracle_fafe(P, X), atol=1e-6)

    def test_zero_output_layer(self, rng):
        m = _model()
        m.params["fad.out.weight"].data[:] = 0
        m.params["fad.out.bias"].data[:] = 0
        out = m.fad(rng.standard_normal((4, 8))).data
        assert out.shape == (4, 22, 6) and not out.any()

    def test_starts_near_rest(self, rng):
        m = SSDPoser(ModelConfig(**TINY))
        out = m(Tensor(rng.standard_normal((4, 54)).astype(np.float32))).data
        assert np.abs(out - IDENTITY_6D).max() < 0.5


class TestFullModel:
    @pytest.mark.parametrize("T", [1, 3, 4])
    def test_shape_contract(self, T, rng):
        m = _model()
        assert m(rng.standard_normal((2, T, 54))).shape == (2, T, 22, 6)

    def test_window_too_long(self):
        with pytest.raises(ValueError):
            _model()(np.zeros((5, 54)))

    def test_deterministic(self, rng):
        n = rng.standard_normal((4, 54)).astype(np.float32)
        a = SSDPoser(ModelConfig(**TINY), seed=3)(Tensor(n)).data
        b = SSDPoser(ModelConfig(**TINY), seed=3)(Tensor(n)).data
        np.testing.assert_array_equal(a, b)

    def test_composed_oracle(self, rng):
        m = _model(I=2)
        _randomize(m, rng, 0.2)
        n = rng.standard_normal((4, 54))
        np.testing.assert_allclose(m(n).data, oracle_forward(m, n), atol=1e-6)

    def test_batch_rows_independent(self, rng):
        m = _model()
        n = rng.standard_normal((3, 4, 54))
        batched = m(n).data
        np.testing.assert_allclose(batched[1], m(n[1]).data, atol=1e-12)

    def test_end_to_end_gradients(self, rng):
        with default_dtype(np.float64):
            m = _model(I=2)
            _randomize(m, rng, 0.1)
            n = Tensor(rng.standard_normal((2, 4, 54)))
            w = Tensor(rng.standard_normal((2, 4, 22, 6)))
            res = check_gradients(lambda: sum_(m(n) * w), dict(m.params.items()), samples=30, rng=rng)
        assert res.rel_error <= 1e-4

    def test_no_grad_inference(self, rng):
        m = SSDPoser(ModelConfig(**TINY))
        with no_grad():
            out = m(Tensor(rng.standard_normal((4, 54)).astype(np.float32)))
        assert not out.requires_grad


class TestParameterCount:
    def test_reference_config_in_band(self):
        count = SSDPoser(ModelConfig(E=256, I=4, T=96)).count_parameters()
        assert 6.2e6 <= count <= 8.8e6

    def test_monotone_in_blocks(self):
        counts = [SSDPoser(ModelConfig(E=64, I=i, heads=4)).count_parameters() for i in (3, 4, 5)]
        assert counts[0] < counts[1] < counts[2]
        # each extra block adds the same number of parameters
        assert counts[2] - counts[1] == counts[1] - counts[0]

    def test_breakdown_sums_to_total(self):
        m = SSDPoser(ModelConfig(**TINY))
        assert sum(m.breakdown().values()) == m.count_parameters()

    def test_degenerate_width(self, rng):
        m = SSDPoser(ModelConfig(T=4, E=1, I=1, heads=1, N_state=1))
        assert m.count_parameters() > 0
        out = m(Tensor(rng.standard_normal((4, 54)).astype(np.float32)))
        assert out.shape == (4, 22, 6) and np.isfinite(out.data).all()

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            ModelConfig(E=10, heads=4)
        with pytest.raises(ValueError):
            ModelConfig(I=0)
