"""State space duality: three evaluation orders of one selective SSM.

The transformation maps ``x`` (T, D) to ``y`` (T, D) through a hidden state
``h_t`` (N, D)::

    h_t = A_t h_{t-1} + B_t x_t^T        (h_0 = 0)
    y_t = C_t^T h_t

which is the same as multiplying ``x`` by the lower-triangular
semiseparable matrix ``H = F * (C B^T)`` where, for a scalar decay per step,
``F[i, j] = A_{j+1} * ... * A_i`` for ``i > j``, ``1`` on the diagonal and
``0`` above it.

``ssd_recurrent`` costs O(T N D), ``ssd_dual`` O(T^2 (N + D)) and
``ssd_chunked`` mixes both: quadratic inside chunks, recurrent across them.
All kernels accept optional leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn.autograd import NonFiniteError, Tensor, as_tensor


@dataclass
class SsdInputs:
    """Per-timestep SSM parameters.

    ``A`` is (..., T) for the scalar-decay case or (..., T, N) for a
    diagonal decay; ``B`` and ``C`` are (..., T, N); ``x`` is (..., T, D).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        self.A = np.asarray(self.A)
        self.B = np.asarray(self.B)
        self.C = np.asarray(self.C)
        self.x = np.asarray(self.x)
        T = self.x.shape[-2]
        if self.B.shape != self.C.shape:
            raise ValueError(f"B {self.B.shape} and C {self.C.shape} must have the same shape")
        if self.B.shape[-2] != T:
            raise ValueError(f"B/C length {self.B.shape[-2]} != x length {T}")
        if self.scalar_decay:
            if self.A.shape[-1] != T:
                raise ValueError(f"A length {self.A.shape[-1]} != x length {T}")
        elif self.A.shape != self.B.shape:
            raise ValueError(f"diagonal A must match B's shape, got {self.A.shape}")

    @property
    def scalar_decay(self) -> bool:
        return self.A.ndim == self.x.ndim - 1

    @property
    def T(self) -> int:
        return self.x.shape[-2]

    @property
    def N(self) -> int:
        return self.B.shape[-1]

    @property
    def D(self) -> int:
        return self.x.shape[-1]


class SsdGrads(NamedTuple):
    dA: np.ndarray
    dB: np.ndarray
    dC: np.ndarray
    dx: np.ndarray


def _require_finite(a: np.ndarray, where: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite hidden state in {where}")


def build_F(A) -> np.ndarray:
    """Lower-triangular decay matrix with exact unit diagonal.

    Row ``i`` is built from row ``i - 1`` by one multiplication, so each
    entry is the literal product ``A_i * A_{i-1} * ... * A_{j+1}``.
    """
    A = np.asarray(A)
    T = A.shape[-1]
    if T < 1:
        raise ValueError("build_F needs at least one timestep")
    F = np.zeros(A.shape + (T,), dtype=A.dtype)
    F[..., 0, 0] = 1
    for i in range(1, T):
        F[..., i, :i] = F[..., i - 1, :i] * A[..., i, None]
        F[..., i, i] = 1
    return F


def ssd_recurrent(inputs: SsdInputs) -> np.ndarray:
    """Linear-time evaluation by scanning the hidden state forward."""
    A, B, C, x = inputs.A, inputs.B, inputs.C, inputs.x
    lead = x.shape[:-2]
    h = np.zeros(lead + (inputs.N, inputs.D), dtype=x.dtype)
    y = np.empty_like(x)
    scalar = inputs.scalar_decay
    for t in range(inputs.T):
        decay = A[..., t, None, None] if scalar else A[..., t, :, None]
        h = decay * h + B[..., t, :, None] * x[..., t, None, :]
        y[..., t, :] = np.einsum("...n,...nd->...d", C[..., t, :], h)
    _require_finite(y, "ssd_recurrent")
    return y


def ssd_dual(inputs: SsdInputs) -> np.ndarray:
    """Quadratic evaluation ``y = (F * (C B^T)) x``."""
    if not inputs.scalar_decay:
        raise ValueError("the dual form requires a scalar decay per timestep")
    H = build_F(inputs.A) * (inputs.C @ np.swapaxes(inputs.B, -1, -2))
    y = H @ inputs.x
    _require_finite(y, "ssd_dual")
    return y


def ssd_kernel(inputs: SsdInputs) -> np.ndarray:
    """The explicit T x T semiseparable matrix H (scalar-decay case)."""
    if not inputs.scalar_decay:
        raise ValueError("the explicit kernel is only built for a scalar decay")
    return build_F(inputs.A) * (inputs.C @ np.swapaxes(inputs.B, -1, -2))


def ssd_chunked(inputs: SsdInputs, chunk: int) -> np.ndarray:
    """Block evaluation: dual form inside each chunk, state carried between."""
    T = inputs.T
    if not 1 <= chunk <= T:
        raise ValueError(f"chunk must lie in [1, {T}], got {chunk}")
    if not inputs.scalar_decay:
        raise ValueError("chunked evaluation requires a scalar decay per timestep")
    A, B, C, x = inputs.A, inputs.B, inputs.C, inputs.x
    y = np.empty_like(x)
    h = None
    for start in range(0, T, chunk):
        stop = min(start + chunk, T)
        Ac, Bc, Cc, xc = A[..., start:stop], B[..., start:stop, :], C[..., start:stop, :], x[..., start:stop, :]
        F = build_F(Ac)
        yc = (F * (Cc @ np.swapaxes(Bc, -1, -2))) @ xc
        # decay from the previous chunk's last state to every position here
        carry = np.cumprod(Ac, axis=-1)
        if h is not None:
            yc = yc + carry[..., :, None] * (Cc @ h)
        to_end = F[..., -1, :]
        contrib = np.swapaxes(Bc * to_end[..., :, None], -1, -2) @ xc
        h = contrib if h is None else carry[..., -1, None, None] * h + contrib
        y[..., start:stop, :] = yc
    _require_finite(y, "ssd_chunked")
    return y


def ssd_backward(inputs: SsdInputs, dy) -> SsdGrads:
    """Gradients of ``sum(dy * y)`` by the adjoint recurrence.

    Works for scalar and diagonal decays, including ``A_t = 0``.
    """
    A, B, C, x = inputs.A, inputs.B, inputs.C, inputs.x
    dy = np.asarray(dy, dtype=x.dtype)
    if dy.shape != x.shape:
        raise ValueError(f"dy shape {dy.shape} != output shape {x.shape}")
    T = inputs.T
    scalar = inputs.scalar_decay
    lead = x.shape[:-2]
    states = np.zeros(lead + (T + 1, inputs.N, inputs.D), dtype=x.dtype)
    for t in range(T):
        decay = A[..., t, None, None] if scalar else A[..., t, :, None]
        states[..., t + 1, :, :] = decay * states[..., t, :, :] + B[..., t, :, None] * x[..., t, None, :]
    _require_finite(states, "ssd_backward")

    dA = np.zeros_like(A)
    dB = np.zeros_like(B)
    dC = np.zeros_like(C)
    dx = np.zeros_like(x)
    dh = np.zeros(lead + (inputs.N, inputs.D), dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        if t < T - 1:
            nxt = A[..., t + 1, None, None] if scalar else A[..., t + 1, :, None]
            dh = nxt * dh
        dh = dh + C[..., t, :, None] * dy[..., t, None, :]
        h_t, h_prev = states[..., t + 1, :, :], states[..., t, :, :]
        dC[..., t, :] = np.einsum("...nd,...d->...n", h_t, dy[..., t, :])
        dB[..., t, :] = np.einsum("...nd,...d->...n", dh, x[..., t, :])
        dx[..., t, :] = np.einsum("...nd,...n->...d", dh, B[..., t, :])
        if scalar:
            dA[..., t] = np.einsum("...nd,...nd->...", dh, h_prev)
        else:
            dA[..., t, :] = np.einsum("...nd,...nd->...n", dh, h_prev)
    return SsdGrads(dA, dB, dC, dx)


# ---------------------------------------------------------------------------
# differentiable op used by the network
# ---------------------------------------------------------------------------

def _decay_from_log(log_a: np.ndarray) -> np.ndarray:
    """``F`` computed from log-decays; upper triangle exactly zero."""
    T = log_a.shape[-1]
    s = np.cumsum(log_a, axis=-1)
    diff = s[..., :, None] - s[..., None, :]
    lower = np.tril(np.ones((T, T), dtype=bool))
    return np.exp(np.where(lower, diff, -np.inf))


def ssd(x, log_a, B, C) -> Tensor:
    """Differentiable scalar-decay SSM with ``A_t = exp(log_a[t])``.

    Shapes: ``x`` (..., T, D), ``log_a`` (..., T), ``B``/``C`` (..., T, N).
    Forward and backward both use the quadratic form, which at window
    lengths of a few hundred frames is a handful of batched matmuls.
    """
    x, log_a, B, C = as_tensor(x), as_tensor(log_a), as_tensor(B), as_tensor(C)
    L = _decay_from_log(log_a.data)
    G = C.data @ np.swapaxes(B.data, -1, -2)
    M = L * G
    y = M @ x.data

    def backward(g):
        dx = np.swapaxes(M, -1, -2) @ g
        dM = g @ np.swapaxes(x.data, -1, -2)
        dG = dM * L
        dC = dG @ B.data
        dB = np.swapaxes(dG, -1, -2) @ C.data
        W = dM * M
        # d log_a[k] = sum over i >= k, j < k of W[i, j]
        below = np.cumsum(W, axis=-1) - W
        rows = np.tril(np.ones(W.shape[-2:], dtype=bool))
        dlog = np.where(rows, below, 0).sum(axis=-2).astype(W.dtype, copy=False)
        return dx, dlog, dB, dC

    return Tensor.from_op(y, (x, log_a, B, C), backward, "ssd")
