"""Fused neural-network primitives with hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, _sigmoid, as_tensor


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (fan_in, fan_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    out = x.data @ weight.data
    if bias is not None:
        out = out + parents[2].data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor.from_op(out, parents, backward, "linear")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        width = x.shape[-1]
        ggain = (g * xhat).reshape(-1, width).sum(axis=0)
        gbias = g.reshape(-1, width).sum(axis=0)
        return gx, ggain, gbias

    return Tensor.from_op(out, (x, gain, bias), backward, "layer_norm")


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return Tensor.from_op(x.data * s, (x,),
                          lambda g: (g * s * (1 + x.data * (1 - s)),), "silu")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward, "softmax")


def _time_padding(k: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        if k % 2 == 0:
            raise ValueError(f"same-padding convolution needs an odd kernel width, got {k}")
        left = (k - 1) // 2
    elif padding == "causal":
        left = k - 1
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    return left, k - 1 - left


def _pad_time(a: np.ndarray, left: int, right: int) -> np.ndarray:
    widths = [(0, 0)] * a.ndim
    widths[-2] = (left, right)
    return np.pad(a, widths)


def conv1d_time(x, kernel, bias=None, padding: str = "same") -> Tensor:
    """Convolution over the time axis of ``x`` (..., T, E_in).

    ``kernel`` has shape (k, E_in, E_out) and is applied as a correlation:
    ``out[t] = sum_j xpad[t + j] @ kernel[j]``. Boundaries are zero-padded,
    centred for ``"same"`` and entirely on the past side for ``"causal"``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k, e_in, e_out = kernel.shape
    if x.shape[-1] != e_in:
        raise ValueError(f"conv1d_time: input width {x.shape[-1]} != kernel E_in {e_in}")
    left, right = _time_padding(k, padding)
    T = x.shape[-2]
    xp = _pad_time(x.data, left, right)
    cols = np.concatenate([xp[..., j:j + T, :] for j in range(k)], axis=-1)
    w2 = kernel.data.reshape(k * e_in, e_out)
    out = cols @ w2
    parents = (x, kernel)
    if bias is not None:
        parents = (x, kernel, as_tensor(bias))
        out = out + parents[2].data

    def backward(g):
        gx = None
        if x.requires_grad:
            gcols = g @ w2.T
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + T, :] += gcols[..., j * e_in:(j + 1) * e_in]
            gx = gxp[..., left:left + T, :]
        g2 = g.reshape(-1, e_out)
        gk = (cols.reshape(-1, k * e_in).T @ g2).reshape(k, e_in, e_out) \
            if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return Tensor.from_op(out, parents, backward, "conv1d_time")


def depthwise_conv1d_time(x, kernel, bias=None, padding: str = "causal") -> Tensor:
    """Per-channel temporal convolution; ``kernel`` is (k, E)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    k, width = kernel.shape
    if x.shape[-1] != width:
        raise ValueError(f"depthwise conv: input width {x.shape[-1]} != kernel width {width}")
    left, right = _time_padding(k, padding)
    T = x.shape[-2]
    xp = _pad_time(x.data, left, right)
    out = xp[..., 0:T, :] * kernel.data[0]
    for j in range(1, k):
        out = out + xp[..., j:j + T, :] * kernel.data[j]
    parents = (x, kernel)
    if bias is not None:
        parents = (x, kernel, as_tensor(bias))
        out = out + parents[2].data

    def backward(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + T, :] += g * kernel.data[j]
            gx = gxp[..., left:left + T, :]
        g2 = g.reshape(-1, width)
        gk = np.stack([(xp[..., j:j + T, :].reshape(-1, width) * g2).sum(axis=0)
                       for j in range(k)])
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return Tensor.from_op(out, parents, backward, "depthwise_conv1d_time")


def scaled_dot_attention(q, k, v, heads: int) -> tuple[Tensor, Tensor]:
    """Bidirectional multi-head attention on (..., T, E) projections.

    Returns the merged (..., T, E) context and the (..., heads, T, T) weights.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    *lead, T, E = q.shape
    if E % heads:
        raise ValueError(f"embedding width {E} not divisible by {heads} heads")
    d = E // heads

    def split_heads(t: Tensor) -> Tensor:
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return t.reshape(*lead, T, heads, d).transpose(axes)

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    scores = (qh @ kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(d))
    weights = softmax(scores, axis=-1)
    ctx = weights @ vh
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ctx.transpose(axes).reshape(*lead, T, E), weights


__all__ = [
    "linear", "layer_norm", "silu", "softmax", "conv1d_time",
    "depthwise_conv1d_time", "scaled_dot_attention",
]
