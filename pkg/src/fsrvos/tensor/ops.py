"""Differentiable operators.

Each function returns a new :class:`Tensor` and registers a backward rule that
maps the output gradient to one gradient per input (``None`` for inputs that
take no gradient).  Broadcast reduction is handled by the tape.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Operand extents are incompatible for the requested operation."""


def _pair(a, b) -> tuple[Tensor, Tensor]:
    return as_tensor(a), as_tensor(b)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    return make_result(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a Python scalar, e.g. ``1/sqrt(d_head)`` for attention logits."""
    factor = float(factor)
    return make_result(a.data * factor, (a,), lambda g: (g * factor,))


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.data
    return make_result(x**exponent, (a,), lambda g: (g * exponent * x ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_result(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return make_result(np.log(x), (a,), lambda g: (g / x,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0.0, -a.data))
    return make_result(y, (a,), lambda g: (g * y * (1.0 - y),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return make_result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return make_result(ad @ bd, (a, b), backward)


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = math.prod(a.shape[ax] for ax in axes) if axes else 1
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {orig} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return make_result(out, (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from None
    return make_result(out, (a,), lambda g: (g,))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(a.data[index]), (a,), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding ids outside [0, {weight.shape[0]})")
    return getitem(weight, ids)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != ax
        ):
            raise ShapeError(
                f"concat: incompatible extents {[x.shape for x in tensors]} on axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        ax = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; outputs along ``axis`` are nonnegative and sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply the affine map."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gamma = weight.data if weight is not None else 1.0
    out = xhat * gamma
    if bias is not None:
        out = out + bias.data
    inputs = tuple(t for t in (x, weight, bias) if t is not None)

    def backward(g):
        dxhat = g * gamma
        dx = inv / d * (
            d * dxhat - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        grads = [dx]
        lead = tuple(range(g.ndim - 1))
        if weight is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return make_result(out, inputs, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation over ``x[B, C_in, H, W]`` with ``weight[C_out, C_in, k, k]``.

    ``padding`` defaults to ``k // 2`` so stride-1 convolutions preserve extents.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if k != k2:
        raise ShapeError(f"conv2d needs a square kernel, got {k}x{k2}")
    pad = k // 2 if padding is None else padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(b, ho, wo, cin, k, k)
            gxp = np.zeros((b, cin, hp, wp))
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, inputs, backward)


@lru_cache(maxsize=64)
def _interp_matrix(n: int, factor: int) -> np.ndarray:
    # align_corners=False: output centre o maps to source (o + 0.5) / factor - 0.5
    m = np.zeros((n * factor, n))
    for o in range(n * factor):
        src = min(max((o + 0.5) / factor - 0.5, 0.0), n - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear resize of the last two axes by an integer factor (half-pixel centres)."""
    h, w = x.shape[-2:]
    uh = _interp_matrix(h, factor)
    uw = _interp_matrix(w, factor)
    out = uh @ x.data @ uw.T
    return make_result(out, (x,), lambda g: (uh.T @ g @ uw,))
