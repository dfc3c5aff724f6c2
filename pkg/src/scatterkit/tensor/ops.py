"""Differentiable operations.

Image tensors are batched ``(N, C, H, W)``; vectors are ``(N, C)``.  All
operations keep the dtype of their inputs.  Convolution is cross-correlation
(no kernel flip).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from .core import Tensor


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return Tensor._from_op(out, (x,), backward, "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take(x: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    """Slice ``[start:stop]`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return Tensor._from_op(out, (x,), backward, "take")


def split(x: Tensor, sections: int, axis: int = 1) -> list[Tensor]:
    size = x.shape[axis]
    if size % sections:
        raise ValueError(f"axis of size {size} does not split into {sections} equal parts")
    step = size // sections
    return [take(x, i * step, (i + 1) * step, axis) for i in range(sections)]


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref))
                                     if i != axis % len(ref)):
            raise ValueError(f"concat shape mismatch: {ref} vs {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor._from_op(out, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tuple(tensors), backward, "stack")


# ---------------------------------------------------------------- layers

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError("dense: bias shape mismatch")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data if x.requires_grad else None
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._from_op(out, parents, backward, "dense")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Grouped 2-D cross-correlation; weight is (C_out, C_in/groups, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects (N,C,H,W) input and (Co,Ci/g,kh,kw) weight")
    n, c_in, h, w = x.shape
    c_out, cpg, kh, kw = weight.shape
    if c_in % groups or c_out % groups or cpg != c_in // groups:
        raise ValueError(f"conv2d: channels {c_in}->{c_out} incompatible with groups={groups} "
                         f"and weight {weight.shape}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError("conv2d: kernel larger than padded input")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError("conv2d: bias shape mismatch")
    opg = c_out // groups
    cols = kernels.im2col(np.ascontiguousarray(x.data), kh, kw, stride, pad)
    _, ho, wo = cols.shape[:3]
    m = n * ho * wo
    kk = kh * kw
    # one row per output position; columns ordered (kh, kw, C)
    w_rows = weight.data.reshape(groups, opg, cpg, kk).transpose(0, 1, 3, 2)   # (G, opg, kk, cpg)
    if groups == 1:
        cols2 = cols.reshape(m, kk * c_in)
        w2 = w_rows.reshape(c_out, kk * cpg)
        out = cols2 @ w2.T
    else:
        cols3 = np.ascontiguousarray(cols.reshape(m, kk, groups, cpg).transpose(2, 0, 1, 3)).reshape(groups, m, kk * cpg)
        w3 = w_rows.reshape(groups, opg, kk * cpg)
        out = np.matmul(cols3, w3.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(m, c_out)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def to_weight(gw_rows):
        # (G, opg, kk, cpg) -> (c_out, cpg, kh, kw)
        return np.ascontiguousarray(gw_rows.transpose(0, 1, 3, 2)).reshape(weight.shape)

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(m, c_out)
        gx = None
        if groups == 1:
            gw = to_weight((gm.T @ cols2).reshape(1, c_out, kk, cpg))
            if x.requires_grad:
                dcols = gm @ w2
        else:
            gm3 = gm.reshape(m, groups, opg).transpose(1, 0, 2)
            gw = to_weight(np.matmul(gm3.transpose(0, 2, 1), cols3).reshape(groups, opg, kk, cpg))
            if x.requires_grad:
                dcols = np.matmul(gm3, w3).reshape(groups, m, kk, cpg).transpose(1, 2, 0, 3)
        if x.requires_grad:
            dcols = np.ascontiguousarray(dcols).reshape(n, ho, wo, kh, kw, c_in)
            gx = kernels.col2im(dcols, n, c_in, h, w, kh, kw, stride, pad)
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    return Tensor._from_op(out, parents, backward, "conv2d")


def maxpool2d(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    if h < kernel or w < kernel:
        raise ValueError("maxpool2d: window larger than input")
    out, arg = kernels.maxpool_forward(np.ascontiguousarray(x.data), kernel, stride)

    def backward(g):
        return (kernels.maxpool_backward(np.ascontiguousarray(g), arg, h, w, kernel, stride),)

    return Tensor._from_op(out, (x,), backward, "maxpool2d")


def gap(x: Tensor) -> Tensor:
    """Global average pooling (N, C, H, W) -> (N, C)."""
    if x.ndim != 4 or x.shape[2] * x.shape[3] < 1:
        raise ValueError("gap expects a non-empty (N,C,H,W) tensor")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / hw)[:, :, None, None], x.shape).astype(x.dtype),)

    return Tensor._from_op(out, (x,), backward, "gap")


def sap(x: Tensor, threshold: float) -> Tensor:
    """Selective average pooling: mean over positions with ``x >= threshold``.

    Channels with no position at or above the threshold pool to 0.
    """
    if x.ndim != 4:
        raise ValueError("sap expects (N,C,H,W)")
    if threshold == -np.inf:
        # every position is selected; share gap's reduction so results match bit for bit
        return gap(x)
    xd = np.ascontiguousarray(x.data)
    out, count = kernels.masked_mean(xd, float(threshold))

    def backward(g):
        mask = xd >= threshold
        scale = np.divide(g, count, out=np.zeros_like(g), where=count > 0)
        return (mask * scale[:, :, None, None],)

    return Tensor._from_op(out, (x,), backward, "sap")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch; ``labels`` are class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(n), labels] = -1.0 / n
    return sum(mul(logp, Tensor(onehot)))
