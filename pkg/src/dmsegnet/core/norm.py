"""Normalization layers: per-instance feature norm and RMS norm."""

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, record


def instance_norm(x: Tensor, scale: Tensor | None = None,
                  shift: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) slice over its spatial extent.

    x [N, C, *spatial]; population variance; optional per-channel affine.
    """
    if x.ndim < 3:
        raise ShapeError(
            f"expected [N,C,*spatial] with at least one spatial axis, got "
            f"rank {x.ndim}"
        )
    c = x.shape[1]
    for t, name in ((scale, "scale"), (shift, "shift")):
        if t is not None and t.shape != (c,):
            raise ShapeError(f"{name} must have shape ({c},), got {t.shape}")
    axes = tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * istd
    y = xhat
    if scale is not None:
        y = y * scale.data.reshape(bshape)
    if shift is not None:
        y = y + shift.data.reshape(bshape)

    def vjp(g):
        gxhat = g * scale.data.reshape(bshape) if scale is not None else g
        m1 = gxhat.mean(axis=axes, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
        gx = istd * (gxhat - m1 - xhat * m2)
        grads = [gx.astype(x.dtype, copy=False)]
        sum_axes = (0,) + axes
        if scale is not None:
            grads.append((g * xhat).sum(axis=sum_axes))
        if shift is not None:
            grads.append(g.sum(axis=sum_axes))
        return grads

    parents = [x] + [t for t in (scale, shift) if t is not None]
    return record(y, parents, vjp)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Root-mean-square normalization over the trailing axis.

    x [..., C], gain [C]: y = gain * x / sqrt(mean(x^2, -1) + eps).
    """
    c = x.shape[-1]
    if gain.shape != (c,):
        raise ShapeError(f"gain must have shape ({c},), got {gain.shape}")
    ms = np.mean(x.data * x.data, axis=-1, keepdims=True)
    r = np.sqrt(ms + eps)
    inv = 1.0 / r
    y = x.data * inv * gain.data

    def vjp(g):
        gg = g * gain.data
        # d/dx_j of x_i/r couples through r: subtract the projection term
        dot = np.sum(gg * x.data, axis=-1, keepdims=True)
        gx = gg * inv - x.data * (dot * inv ** 3 / c)
        ggain = np.sum(g * x.data * inv,
                       axis=tuple(range(x.ndim - 1)))
        return [gx.astype(x.dtype, copy=False), ggain]

    return record(y, [x, gain], vjp)
