"""Fused differentiable operators used by the encoder and the losses."""
from __future__ import annotations

import math

import numpy as np

from litetok.errors import DimensionError, NumericError, ShapeError
from litetok.numerics.tensor import Tensor, as_tensor, record, _unbroadcast

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def softmax_last_axis(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError("softmax needs a non-empty last axis")
    if np.isnan(x.data).any():
        raise NumericError("NaN in softmax input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z.astype(np.float64))
    y = (e / e.sum(axis=-1, keepdims=True)).astype(x.data.dtype)

    def bw(g):
        dot = (g.astype(np.float64) * y).sum(axis=-1, keepdims=True)
        return ((y * (g - dot)).astype(x.data.dtype),)

    return record(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs at least 2 features")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"gain/bias must have shape ({d},)")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv
    dtype = x.data.dtype
    out = (xhat * gain.data + bias.data).astype(dtype)

    def bw(g):
        g64 = g.astype(np.float64)
        lead = tuple(range(g.ndim - 1))
        dgain = (g64 * xhat).sum(axis=lead).astype(dtype)
        dbias = g64.sum(axis=lead).astype(dtype)
        dxhat = g64 * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx.astype(dtype), dgain, dbias

    return record(out, (x, gain, bias), bw, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * (v * v * v)))
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return record(out, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = x @ weight
    return y if bias is None else y + bias


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.where(idx < 0, -idx, idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


def conv_indices(n: int, k: int, stride: int) -> np.ndarray:
    """Source index table ``[n_out, k]`` for a centred, reflect-padded window."""
    pad = k // 2
    centres = np.arange(0, n, stride)
    return _reflect(centres[:, None] + np.arange(k)[None, :] - pad, n)


def depthwise_conv1d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same",
                     axis: int = 0) -> Tensor:
    """Per-channel 1D convolution along ``axis``; channels are the last axis.

    Windows are centred on positions ``0, stride, 2*stride, ...`` with reflective
    boundary handling. ``"same"`` requires stride 1; ``"valid-strided"``
    requires stride > 1 dividing the sequence length.
    """
    k, c = kernel.shape
    if k % 2 != 1:
        raise ShapeError(f"kernel length must be odd, got {k}")
    if x.shape[-1] != c:
        raise DimensionError(f"kernel has {c} channels, input has {x.shape[-1]}")
    axis = axis % x.ndim
    if axis == x.ndim - 1:
        raise DimensionError("cannot convolve along the channel axis")
    n = x.shape[axis]
    if padding == "same":
        if stride != 1:
            raise ShapeError("'same' padding requires stride 1")
    elif padding == "valid-strided":
        if stride <= 1:
            raise ShapeError("'valid-strided' padding requires stride > 1")
        if n % stride:
            raise ShapeError(f"sequence length {n} not divisible by stride {stride}")
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    if n <= k // 2:
        raise ShapeError(f"sequence length {n} too short for reflective kernel of {k}")

    idx = conv_indices(n, k, stride)
    xm = np.moveaxis(x.data, axis, 0)
    gathered = xm[idx]  # [n_out, k, ..., C]
    kshape = (1, k) + (1,) * (xm.ndim - 2) + (c,)
    kern = kernel.data.reshape(kshape)
    out = np.moveaxis((gathered * kern).sum(axis=1), 0, axis)

    def bw(g):
        gm = np.moveaxis(g, axis, 0)[:, None]  # [n_out, 1, ..., C]
        red = (0,) + tuple(range(2, gathered.ndim - 1))
        dkernel = (gm * gathered).sum(axis=red)
        dxm = np.zeros_like(xm)
        np.add.at(dxm, idx, gm * kern)
        return np.moveaxis(dxm, 0, axis), dkernel

    return record(out, (x, kernel), bw, "depthwise_conv1d")


def clamp_abs(x: Tensor, bound: Tensor) -> Tensor:
    """Saturate ``x`` to ``[-bound, bound]``; the gradient flows to ``bound``
    for saturated elements."""
    x, bound = as_tensor(x), as_tensor(bound, x)
    b = np.broadcast_to(bound.data, x.shape)
    over = x.data > b
    under = x.data < -b
    out = np.where(over, b, np.where(under, -b, x.data))

    def bw(g):
        inside = ~(over | under)
        gb = np.where(over, g, 0.0) - np.where(under, g, 0.0)
        return g * inside, _unbroadcast(gb.astype(x.data.dtype), bound.shape)

    return record(out, (x, bound), bw)


def mse(a: Tensor, b) -> Tensor:
    d = a - b
    return (d * d).mean()
