"""Differentiable primitives.

Each primitive computes its forward value with numpy and registers a closure
returning one gradient per parent (``None`` where no gradient flows).
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np

from ..errors import DegenerateNormError, ShapeError
from . import kernels
from .tensor import Tensor, as_tensor, broadcast_shape, check_finite, make_result

# ---------------------------------------------------------------------------
# elementwise arithmetic


def _pair(op: str, a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = as_tensor(b, a)
    else:
        a = as_tensor(a, b)
    broadcast_shape(op, a, b)
    check_finite(op, a, b)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair("add", a, b)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _pair("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair("mul", a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b) -> Tensor:
    a, b = _pair("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    check_finite("power", a)
    ad = a.data
    e = float(exponent)
    return make_result(ad ** e, (a,), lambda g: (g * e * ad ** (e - 1.0),), "power")


def exp(a: Tensor) -> Tensor:
    check_finite("exp", a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    check_finite("log", a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    check_finite("sqrt", a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: Tensor) -> Tensor:
    check_finite("tanh", a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    check_finite("sigmoid", a)
    out = kernels.sigmoid(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    check_finite("relu", a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x`` where positive, ``slope * x`` elsewhere; ``slope`` broadcasts over ``x``."""
    x, slope = _pair("prelu", x, slope)
    xd, sd = x.data, slope.data
    pos = xd > 0
    out = np.where(pos, xd, sd * xd)
    return make_result(out, (x, slope),
                       lambda g: (np.where(pos, g, g * sd), np.where(pos, 0.0, g * xd)), "prelu")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor
    return make_result(np.where(mask, a.data, floor).astype(a.dtype), (a,),
                       lambda g: (g * mask,), "clamp_min")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = (a, as_tensor(b, a)) if isinstance(a, Tensor) else (as_tensor(a, b), b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    check_finite("matmul", a, b)
    ad, bd = a.data, b.data
    return make_result(ad @ bd, (a, b),
                       lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g), "matmul")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum(a, axes, keepdims) * (1.0 / count)


def var(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (divide by the number of reduced entries)."""
    centered = a - mean(a, axis, keepdims=True)
    return mean(centered * centered, axis, keepdims)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a: Tensor, a1: int, a2: int) -> Tensor:
    return make_result(np.swapaxes(a.data, a1, a2), (a,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return make_result(np.broadcast_to(a.data, shape), (a,), lambda g: (g,), "broadcast_to")


def _has_array_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return builtins.any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype
    fancy = _has_array_index(index)

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return make_result(a.data[index], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    tensors = [as_tensor(t, ref) for t in tensors]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or builtins.any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != ax):
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return grads

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        ax = axis % (t.ndim + 1)
        shape.insert(ax, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis)


def pad(a: Tensor, before: int, after: int, axis: int = -1) -> Tensor:
    """Zero-pad ``a`` along one axis."""
    ax = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[ax] = (before, after)
    n = a.shape[ax]

    def backward(g):
        idx = [slice(None)] * g.ndim
        idx[ax] = slice(before, before + n)
        return (g[tuple(idx)],)

    return make_result(np.pad(a.data, widths), (a,), backward, "pad")


# ---------------------------------------------------------------------------
# normalisation / probability


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    check_finite("softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    check_finite("log_softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    lsm = log_softmax(logits, axis=-1)
    picked = getitem(lsm, (np.arange(len(targets)), targets))
    return -mean(picked)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if weight.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape} vs weight {weight.shape} / bias {bias.shape}")
    check_finite("layer_norm", x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    wd = weight.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * wd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(xhat * wd + bias.data, (x, weight, bias), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 0.0) -> Tensor:
    """Divide by the L2 norm along ``axis``; a zero vector raises."""
    norm_sq = x.data.astype(np.float64) ** 2
    norm_sq = norm_sq.sum(axis=axis, keepdims=True)
    if eps == 0.0 and np.any(norm_sq == 0.0):
        raise DegenerateNormError("l2_normalize: zero vector has no direction")
    n = sqrt(sum(x * x, axis, keepdims=True) + eps)
    return x / n


# ---------------------------------------------------------------------------
# framing / convolution


def unfold(x: Tensor, kernel: int, stride: int = 1, dilation: int = 1) -> Tensor:
    """Sliding windows over axis 1: ``[B, T, C] -> [B, Tout, kernel, C]``."""
    if x.ndim != 3:
        raise ShapeError(f"unfold: expected [B, T, C], got {x.shape}")
    span = dilation * (kernel - 1) + 1
    if x.shape[1] < span:
        raise ShapeError(f"unfold: length {x.shape[1]} shorter than receptive field {span}")
    n = x.shape[1]
    out = kernels.unfold(x.data, kernel, stride, dilation)
    return make_result(out, (x,), lambda g: (kernels.fold(g, n, stride, dilation),), "unfold")


def fold(frames: Tensor, length: int, stride: int, dilation: int = 1) -> Tensor:
    """Overlap-add, the adjoint of :func:`unfold`: ``[B, T, K, C] -> [B, length, C]``."""
    kernel = frames.shape[2]
    out = kernels.fold(frames.data, length, stride, dilation)
    return make_result(out, (frames,), lambda g: (kernels.unfold(g, kernel, stride, dilation),), "fold")


def conv1d(x: Tensor, weight: Tensor, stride: int = 1, dilation: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over time: ``x [B, T, Cin]``, ``weight [K, Cin, Cout]`` -> ``[B, Tout, Cout]``."""
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[1] != x.shape[2]:
        raise ShapeError(f"conv1d: input {x.shape} vs weight {weight.shape}")
    if padding:
        x = pad(x, padding, padding, axis=1)
    k, cin, cout = weight.shape
    cols = unfold(x, k, stride, dilation)
    b, t = cols.shape[:2]
    return reshape(reshape(cols, (b, t, k * cin)) @ reshape(weight, (k * cin, cout)), (b, t, cout))


def depthwise_conv1d(x: Tensor, weight: Tensor, dilation: int = 1, padding: int = 0) -> Tensor:
    """Per-channel convolution: ``x [B, T, C]``, ``weight [K, C]``."""
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[2]:
        raise ShapeError(f"depthwise_conv1d: input {x.shape} vs weight {weight.shape}")
    if padding:
        x = pad(x, padding, padding, axis=1)
    cols = unfold(x, weight.shape[0], 1, dilation)
    return sum(cols * weight, axis=2)


def frame_signal(x: Tensor, frame: int, hop: int) -> Tensor:
    """``[B, n] -> [B, T, frame]`` with ``T = 1 + (n - frame) // hop``."""
    b, n = x.shape
    cols = unfold(reshape(x, (b, n, 1)), frame, hop)
    return reshape(cols, cols.shape[:3])


def overlap_add(frames: Tensor, hop: int, length: int | None = None) -> Tensor:
    """``[B, T, frame] -> [B, (T-1)*hop + frame]`` (or ``length`` if larger)."""
    b, t, k = frames.shape
    n = builtins.max((t - 1) * hop + k, length or 0)
    out = fold(reshape(frames, (b, t, k, 1)), n, hop)
    return reshape(out, (b, n))


# ---------------------------------------------------------------------------
# recurrent


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """Single LSTM layer over a whole sequence, zero initial state.

    ``x [B, T, I]``, ``w_ih [I, 4H]``, ``w_hh [H, 4H]``, ``bias [4H]`` with gate
    order (input, forget, cell, output). Returns hidden states ``[B, T, H]``.
    The time recurrence runs in :mod:`kernels` (compiled when available).
    """
    if x.ndim != 3 or w_ih.shape[0] != x.shape[2] or w_hh.shape[1] != w_ih.shape[1] \
            or w_hh.shape[1] != 4 * w_hh.shape[0] or bias.shape != (w_ih.shape[1],):
        raise ShapeError(f"lstm: input {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {bias.shape}")
    check_finite("lstm", x, w_ih, w_hh, bias)
    b, t, i = x.shape
    h = w_hh.shape[0]
    dtype = x.dtype
    xt = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))  # [T, B, I]
    xproj = np.ascontiguousarray((xt.reshape(t * b, i) @ w_ih.data + bias.data).reshape(t, b, 4 * h), dtype=dtype)
    whh = np.ascontiguousarray(w_hh.data, dtype=dtype)
    hs, cs, acts = kernels.lstm_forward(xproj, whh)

    def backward(g):
        dh = np.ascontiguousarray(np.swapaxes(g, 0, 1), dtype=dtype)
        dgates = kernels.lstm_backward(dh, cs, acts, whh)
        flat = dgates.reshape(t * b, 4 * h)
        dx = (flat @ w_ih.data.T).reshape(t, b, i).swapaxes(0, 1)
        h_prev = np.concatenate([np.zeros((1, b, h), dtype=dtype), hs[:-1]], axis=0).reshape(t * b, h)
        return dx, xt.reshape(t * b, i).T @ flat, h_prev.T @ flat, flat.sum(axis=0)

    return make_result(np.ascontiguousarray(np.swapaxes(hs, 0, 1)), (x, w_ih, w_hh, bias), backward, "lstm")


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step composed from elementary primitives; returns ``(h, c)``."""
    hid = w_hh.shape[0]
    gates = x @ w_ih + h @ w_hh + bias
    i = sigmoid(gates[..., 0:hid])
    f = sigmoid(gates[..., hid:2 * hid])
    g = tanh(gates[..., 2 * hid:3 * hid])
    o = sigmoid(gates[..., 3 * hid:4 * hid])
    c_new = f * c + i * g
    return o * tanh(c_new), c_new
