"""The pose network: linear feature extractor, hybrid SSM/attention encoder
blocks, and the frequency-aware decoder.

Input is a window of sparse tracker signals (T, 54); output is 22 local joint
rotations in 6D per frame (T, 22, 6). A leading batch axis is accepted
everywhere.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from .kinematics import IDENTITY_6D, INPUT_WIDTH
from .nn import ParameterStore, Tensor, as_tensor, concat, relu, softplus, split
from .nn import functional as F
from .nn.params import ones, uniform_fan_in, zeros
from .skeleton import NUM_JOINTS
from .ssd import ssd

OUTPUT_WIDTH = NUM_JOINTS * 6


@dataclass
class ModelConfig:
    T: int = 96
    C_in: int = INPUT_WIDTH
    E: int = 256
    I: int = 4
    heads: int = 8
    ffn_hidden: int = 0
    N_state: int = 64
    conv_k: int = 4
    S_out: int = OUTPUT_WIDTH

    def __post_init__(self) -> None:
        if self.ffn_hidden <= 0:
            self.ffn_hidden = 8 * self.E
        if self.C_in != INPUT_WIDTH:
            raise ValueError(f"C_in must be {INPUT_WIDTH}, got {self.C_in}")
        if self.S_out != OUTPUT_WIDTH:
            raise ValueError(f"S_out must be {OUTPUT_WIDTH}, got {self.S_out}")
        if self.I < 1:
            raise ValueError("need at least one encoder block")
        for name in ("T", "E", "heads", "N_state", "conv_k", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.E % self.heads:
            raise ValueError(f"E={self.E} is not divisible by heads={self.heads}")

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in values.items() if k in names})


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SSDPoser:
    """Parameters plus the forward pass of the pose network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0) -> None:
        self.cfg = cfg
        self.params = ParameterStore()
        rng = np.random.default_rng(seed)
        self._build(rng)

    # -- parameters -------------------------------------------------------
    def _linear(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        self.params.add(f"{name}.weight", uniform_fan_in(rng, fan_in, (fan_in, fan_out)))
        self.params.add(f"{name}.bias", uniform_fan_in(rng, fan_in, (fan_out,)))

    def _norm(self, name: str, width: int) -> None:
        self.params.add(f"{name}.gain", ones((width,)))
        self.params.add(f"{name}.bias", zeros((width,)))

    def _build(self, rng: np.random.Generator) -> None:
        c = self.cfg
        E, N = c.E, c.N_state
        self._linear(rng, "bfe", c.C_in, E)
        self.params.add("pos_embed", 0.02 * rng.standard_normal((c.T, E)).astype(zeros(()).dtype))
        for i in range(c.I):
            p = f"blocks.{i}.pssb"
            self._norm(f"{p}.norm", E)
            self._linear(rng, f"{p}.in_proj", E, 3 * E + 2 * N + 1)
            self.params.add(f"{p}.conv.weight", uniform_fan_in(rng, c.conv_k, (c.conv_k, E + 2 * N)))
            self.params.add(f"{p}.conv.bias", zeros((E + 2 * N,)))
            # softplus(rate) = 1 and a step size drawn log-uniformly in [1e-3, 1e-1]
            self.params.add(f"{p}.decay_rate", _inverse_softplus(ones((1,))))
            step = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=(1,)))
            self.params.add(f"{p}.step_bias", _inverse_softplus(step).astype(zeros(()).dtype))
            self._norm(f"{p}.out_norm", E)
            self._linear(rng, f"{p}.out_proj", E, E)
            a = f"blocks.{i}.attn"
            self._norm(f"{a}.norm1", E)
            self._linear(rng, f"{a}.qkv", E, 3 * E)
            self._linear(rng, f"{a}.out", E, E)
            self._norm(f"{a}.norm2", E)
            self._linear(rng, f"{a}.fc1", E, c.ffn_hidden)
            self._linear(rng, f"{a}.fc2", c.ffn_hidden, E)
        self._norm("fad.norm_in", E)
        self.params.add("fad.conv1.weight", uniform_fan_in(rng, E, (1, E, E)))
        self.params.add("fad.conv1.bias", uniform_fan_in(rng, E, (E,)))
        self.params.add("fad.conv5.weight", uniform_fan_in(rng, 5 * E, (5, E, E)))
        self.params.add("fad.conv5.bias", uniform_fan_in(rng, 5 * E, (E,)))
        self._norm("fad.norm_out", 3 * E)
        # small output weights and an identity-rotation bias start every joint near rest
        self.params.add("fad.out.weight", 0.1 * uniform_fan_in(rng, 3 * E, (3 * E, c.S_out)))
        self.params.add("fad.out.bias", np.tile(IDENTITY_6D, NUM_JOINTS).astype(zeros(()).dtype))

    def count_parameters(self) -> int:
        return count_parameters(self.params)

    def breakdown(self) -> "OrderedDict[str, int]":
        """Parameter count per top-level component."""
        out: OrderedDict[str, int] = OrderedDict()
        for name, p in self.params.items():
            parts = name.split(".")
            key = ".".join(parts[:3]) if parts[0] == "blocks" else parts[0]
            out[key] = out.get(key, 0) + int(p.size)
        return out

    # -- forward ----------------------------------------------------------
    def _ln(self, x, name: str) -> Tensor:
        return F.layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"])

    def _lin(self, x, name: str) -> Tensor:
        return F.linear(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def bfe(self, n) -> Tensor:
        n = as_tensor(n)
        if n.shape[-1] != self.cfg.C_in:
            raise ValueError(f"expected {self.cfg.C_in} input features, got {n.shape[-1]}")
        return self._lin(n, "bfe")

    def embed(self, n) -> Tensor:
        """Base features plus the learned positional embedding."""
        V0 = self.bfe(n)
        T = V0.shape[-2]
        if T > self.cfg.T:
            raise ValueError(f"window of {T} frames exceeds configured T={self.cfg.T}")
        pos = self.params["pos_embed"]
        return V0 + (pos if T == self.cfg.T else pos[:T])

    def pssb(self, V, i: int) -> Tensor:
        p = f"blocks.{i}.pssb"
        E, N = self.cfg.E, self.cfg.N_state
        V = as_tensor(V)
        u = self._ln(V, f"{p}.norm")
        xbc, skip, gate, step = split(self._lin(u, f"{p}.in_proj"), [E + 2 * N, E, E, 1])
        xbc = F.silu(F.depthwise_conv1d_time(xbc, self.params[f"{p}.conv.weight"],
                                             self.params[f"{p}.conv.bias"], padding="causal"))
        y1, B, C = split(xbc, [E, N, N])
        delta = softplus(step + self.params[f"{p}.step_bias"])[..., 0]
        log_a = -(softplus(self.params[f"{p}.decay_rate"]) * delta)
        y2 = ssd(y1 + skip, log_a, B, C)
        y3 = F.silu(gate)
        return self._lin(self._ln(y2 * y3, f"{p}.out_norm"), f"{p}.out_proj") + V

    def attention(self, Y, i: int, return_weights: bool = False):
        a = f"blocks.{i}.attn"
        E = self.cfg.E
        Y = as_tensor(Y)
        q, k, v = split(self._lin(self._ln(Y, f"{a}.norm1"), f"{a}.qkv"), [E, E, E])
        ctx, weights = F.scaled_dot_attention(q, k, v, self.cfg.heads)
        Y = Y + self._lin(ctx, f"{a}.out")
        hidden = relu(self._lin(self._ln(Y, f"{a}.norm2"), f"{a}.fc1"))
        out = Y + self._lin(hidden, f"{a}.fc2")
        return (out, weights) if return_weights else out

    def block(self, V, i: int) -> Tensor:
        return self.attention(self.pssb(V, i), i)

    def fafe(self, X) -> Tensor:
        X = as_tensor(X)
        P = self.params
        f2 = F.silu(F.conv1d_time(X, P["fad.conv1.weight"], P["fad.conv1.bias"])) * X
        f3 = F.silu(F.conv1d_time(X, P["fad.conv5.weight"], P["fad.conv5.bias"], padding="same")) + X
        return concat([X, f2, f3], axis=-1)

    def fad(self, V) -> Tensor:
        Xm = self._ln(V, "fad.norm_in")
        M = self._lin(self._ln(self.fafe(Xm), "fad.norm_out"), "fad.out")
        return M.reshape(*M.shape[:-1], NUM_JOINTS, 6)

    def encode(self, n) -> Tensor:
        V = self.embed(n)
        for i in range(self.cfg.I):
            V = self.block(V, i)
        return V

    def forward(self, n) -> Tensor:
        """(..., T, 54) tracker signals to (..., T, 22, 6) local rotations."""
        return self.fad(self.encode(n))

    __call__ = forward


def count_parameters(params: ParameterStore) -> int:
    return params.count()
