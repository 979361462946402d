"""Differentiable primitives: arithmetic, shape moves, activations, losses."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import special

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False).copy(),)
        g_ = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_, a.shape).copy(),)

    return record(np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- shape moves --------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return record(out, (a,), lambda g: (g.transpose(inverse),))


def flip(a, axes) -> Tensor:
    a = as_tensor(a)
    out = np.flip(a.data, axis=axes).copy()
    return record(out, (a,), lambda g: (np.flip(g, axis=axes),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(tensors)):
            slicer[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(pieces)

    return record(out, tensors, vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(start, start + length)
    out = np.ascontiguousarray(a.data[tuple(slicer)])

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[tuple(slicer)] = g
        return (full,)

    return record(out, (a,), vjp)


def split(a, sizes: Sequence[int], axis: int) -> tuple:
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis {axis} of {a.shape}")
    pieces, start = [], 0
    for size in sizes:
        pieces.append(narrow(a, axis, start, size))
        start += size
    return tuple(pieces)


def cast(a, dtype) -> Tensor:
    a = as_tensor(a)
    dtype = np.dtype(dtype)
    out = a.data.astype(dtype)
    return record(out, (a,), lambda g: (g.astype(a.dtype),))


# -- activations --------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    return record(out, (a,), lambda g: (g * (a.data > 0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return special.expit(x)


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = _sigmoid(a.data)
    out = a.data * sig

    def vjp(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return record(out, (a,), vjp)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    # logaddexp(0, x) = log(1 + exp(x)), overflow-safe
    out = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def vjp(g):
        return (g * _sigmoid(a.data),)

    return record(out, (a,), vjp)


_ACTIVATIONS = {"relu": relu, "silu": silu, "softplus": softplus}


def activation(a, kind: str) -> Tensor:
    """Elementwise nonlinearity; ``kind`` is one of relu/silu/softplus."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ShapeError(f"unknown activation kind {kind!r}") from None
    return fn(a)


# -- affine map over the trailing dimension ------------------------------


def linear(a, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``out[..., o] = sum_i a[..., i] * weight[o, i] (+ bias[o])``."""
    a, weight = as_tensor(a), as_tensor(weight)
    if a.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input last dim {a.shape[-1]} != weight in dim {weight.shape[1]}"
        )
    out = a.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear: bias shape must be (out_features,)")
        out = out + bias.data

    def vjp(g):
        ga = g @ weight.data
        gw = g.reshape(-1, g.shape[-1]).T @ a.data.reshape(-1, a.shape[-1])
        grads = [ga, gw]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return tuple(grads)

    parents = (a, weight) if bias is None else (a, weight, bias)
    return record(out, parents, vjp)


# -- lossless block rearrangement ----------------------------------------


def space_to_depth_3d(a, factor: int) -> Tensor:
    """Fold each factor^3 spatial block into channels.

    Output channel layout is channel-major: input channel c and in-block
    offset (bd, bh, bw) land at channel c*r^3 + bd*r^2 + bh*r + bw.
    """
    a = as_tensor(a)
    if a.ndim != 5:
        raise ShapeError("space_to_depth_3d expects a rank-5 [N,C,D,H,W] tensor")
    r = int(factor)
    n, c, d, h, w = a.shape
    if r < 1:
        raise ShapeError("factor must be >= 1")
    if d % r or h % r or w % r:
        raise ShapeError(f"spatial dims {(d, h, w)} not divisible by factor {r}")
    if r == 1:
        return record(a.data.copy(), (a,), lambda g: (g,))
    x = a.data.reshape(n, c, d // r, r, h // r, r, w // r, r)
    x = x.transpose(0, 1, 3, 5, 7, 2, 4, 6)
    out = np.ascontiguousarray(x).reshape(n, c * r * r * r, d // r, h // r, w // r)

    def vjp(g):
        gg = g.reshape(n, c, r, r, r, d // r, h // r, w // r)
        gg = gg.transpose(0, 1, 5, 2, 6, 3, 7, 4)
        return (np.ascontiguousarray(gg).reshape(n, c, d, h, w),)

    return record(out, (a,), vjp)


def depth_to_space_3d(a, factor: int) -> Tensor:
    """Exact inverse of :func:`space_to_depth_3d` for the same factor."""
    a = as_tensor(a)
    if a.ndim != 5:
        raise ShapeError("depth_to_space_3d expects a rank-5 [N,C,D,H,W] tensor")
    r = int(factor)
    n, crrr, d, h, w = a.shape
    if r < 1:
        raise ShapeError("factor must be >= 1")
    if crrr % (r * r * r):
        raise ShapeError(f"channel count {crrr} not divisible by factor^3 {r**3}")
    if r == 1:
        return record(a.data.copy(), (a,), lambda g: (g,))
    c = crrr // (r * r * r)
    x = a.data.reshape(n, c, r, r, r, d, h, w)
    x = x.transpose(0, 1, 5, 2, 6, 3, 7, 4)
    out = np.ascontiguousarray(x).reshape(n, c, d * r, h * r, w * r)

    def vjp(g):
        gg = g.reshape(n, c, d, r, h, r, w, r)
        gg = gg.transpose(0, 1, 3, 5, 7, 2, 4, 6)
        return (np.ascontiguousarray(gg).reshape(n, crrr, d, h, w),)

    return record(out, (a,), vjp)


# -- classification loss --------------------------------------------------


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean voxelwise cross-entropy between [N,K,...] logits and int labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits {logits.shape}"
        )
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"labels must lie in [0, {k})")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp  # [N,K,...]
    idx = np.expand_dims(labels, 1)
    picked = np.take_along_axis(logp, idx, axis=1)
    count = labels.size
    loss = -picked.sum() / count

    def vjp(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, idx, 1.0, axis=1)
        return ((probs - onehot) * (g / count),)

    return record(np.asarray(loss, dtype=x.dtype), (logits,), vjp)
