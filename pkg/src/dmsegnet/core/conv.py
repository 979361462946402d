"""Dense 3-d convolution, its transpose, and the causal 1-d variant.

The float32 path lowers to im2col plus a BLAS matmul, which is where
nearly all training time goes. The float64 path accumulates in a fixed
lexicographic (channel, kd, kh, kw) order so that verification harnesses
can compare against a scalar loop bit for bit.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from ..errors import OpSpecError, ShapeError
from . import _kernels
from .tensor import Tensor, record

Triple = tuple[int, int, int]


def _as_triple(v, name: str) -> Triple:
    if isinstance(v, int):
        v = (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise OpSpecError(f"{name} must be an int or a 3-tuple, got {v!r}")
    return v


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 3-d convolution: kernel, stride, padding, groups."""

    kernel: Triple
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_triple(self.kernel, "kernel"))
        object.__setattr__(self, "stride", _as_triple(self.stride, "stride"))
        object.__setattr__(self, "padding", _as_triple(self.padding, "padding"))
        if any(k < 1 for k in self.kernel):
            raise OpSpecError(f"kernel dims must be >= 1, got {self.kernel}")
        if any(s < 1 for s in self.stride):
            raise OpSpecError(f"stride dims must be >= 1, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise OpSpecError(f"padding dims must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise OpSpecError(f"groups must be >= 1, got {self.groups}")

    def out_shape(self, spatial: Triple) -> Triple:
        out = []
        for i, (size, k, s, p) in enumerate(
            zip(spatial, self.kernel, self.stride, self.padding)
        ):
            o = (size + 2 * p - k) // s + 1
            if size + 2 * p < k:
                raise OpSpecError(
                    f"axis {i}: input {size} with padding {p} is smaller "
                    f"than kernel {k}"
                )
            out.append(o)
        return tuple(out)

    def transposed_out_shape(self, spatial: Triple) -> Triple:
        out = []
        for i, (size, k, s, p) in enumerate(
            zip(spatial, self.kernel, self.stride, self.padding)
        ):
            o = (size - 1) * s - 2 * p + k
            if o < 1:
                raise OpSpecError(
                    f"axis {i}: transposed output would be {o}, need >= 1"
                )
            out.append(o)
        return tuple(out)


def _pad_spatial(x: np.ndarray, padding: Triple) -> np.ndarray:
    pd, ph, pw = padding
    if pd == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def _im2col(xpad: np.ndarray, kernel: Triple, stride: Triple) -> np.ndarray:
    """[N,C,Dp,Hp,Wp] -> contiguous [N, C, KD, KH, KW, OD, OH, OW]."""
    sd, sh, sw = stride
    win = np.lib.stride_tricks.sliding_window_view(xpad, kernel, axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw]
    return np.ascontiguousarray(win.transpose(0, 1, 5, 6, 7, 2, 3, 4))


def _grouped_matmul(a: np.ndarray, b: np.ndarray, groups: int) -> np.ndarray:
    """Per-group [G,o,k] @ [N,G,k,p] -> [N, G*o, p]."""
    n = b.shape[0]
    if groups == 1:
        return np.matmul(a[0], b[:, 0])
    out = np.empty((n, groups * a.shape[1], b.shape[3]), dtype=b.dtype)
    for g in range(groups):
        out[:, g * a.shape[1]:(g + 1) * a.shape[1]] = np.matmul(a[g], b[:, g])
    return out


def _conv3d_fixed_order(xpad: np.ndarray, w: np.ndarray, stride: Triple,
                        out_sp: Triple, groups: int) -> np.ndarray:
    """Accumulate output in lexicographic (c, kd, kh, kw) term order.

    Matches the partial-sum sequence of a scalar five-loop reference, so
    float64 comparisons against such a loop hold exactly.
    """
    n = xpad.shape[0]
    o_total, cg = w.shape[0], w.shape[1]
    og = o_total // groups
    sd, sh, sw = stride
    od, oh, ow = out_sp
    y = np.zeros((n, o_total, od, oh, ow), dtype=xpad.dtype)
    for g in range(groups):
        for ci in range(cg):
            c = g * cg + ci
            for kd, kh, kw in product(*(range(k) for k in w.shape[2:])):
                patch = xpad[:, c,
                             kd:kd + od * sd:sd,
                             kh:kh + oh * sh:sh,
                             kw:kw + ow * sw:sw]
                coef = w[g * og:(g + 1) * og, ci, kd, kh, kw]
                y[:, g * og:(g + 1) * og] += (
                    coef[None, :, None, None, None] * patch[:, None]
                )
    return y


def _check_conv_args(x: Tensor, weight: Tensor, bias, spec: ConvSpec,
                     transposed: bool) -> None:
    if x.ndim != 5:
        raise ShapeError(f"expected [N,C,D,H,W] input, got rank {x.ndim}")
    if weight.ndim != 5:
        raise ShapeError(f"expected rank-5 weight, got rank {weight.ndim}")
    if tuple(weight.shape[2:]) != spec.kernel:
        raise ShapeError(
            f"weight kernel {weight.shape[2:]} does not match spec "
            f"{spec.kernel}"
        )
    cin = x.shape[1]
    if transposed:
        if weight.shape[0] != cin:
            raise ShapeError(
                f"weight expects {weight.shape[0]} input channels, got {cin}"
            )
        if cin % spec.groups:
            raise ShapeError(f"{cin} input channels not divisible by "
                             f"{spec.groups} groups")
    else:
        if weight.shape[1] * spec.groups != cin:
            raise ShapeError(
                f"weight expects {weight.shape[1] * spec.groups} input "
                f"channels, got {cin}"
            )
        if weight.shape[0] % spec.groups:
            raise ShapeError(f"{weight.shape[0]} output channels not "
                             f"divisible by {spec.groups} groups")
    if bias is not None and bias.shape != (
        weight.shape[1] * spec.groups if transposed else weight.shape[0],
    ):
        raise ShapeError(f"bias shape {bias.shape} does not match output "
                         f"channels")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None,
           spec: ConvSpec) -> Tensor:
    """Grouped 3-d cross-correlation.

    x [N, C, D, H, W], weight [O, C/groups, kd, kh, kw], bias [O] or None.
    """
    _check_conv_args(x, weight, bias, spec, transposed=False)
    out_sp = spec.out_shape(x.shape[2:])
    groups = spec.groups
    n, cin = x.shape[:2]
    o_total = weight.shape[0]
    og, cg = o_total // groups, cin // groups
    k3 = int(np.prod(spec.kernel))
    npos = int(np.prod(out_sp))

    xpad = _pad_spatial(x.data, spec.padding)
    if x.dtype == np.float64:
        y = _conv3d_fixed_order(xpad, weight.data, spec.stride, out_sp, groups)
        cols = None
    else:
        cols = _im2col(xpad, spec.kernel, spec.stride)
        colmat = cols.reshape(n, groups, cg * k3, npos)
        wmat = weight.data.reshape(groups, og, cg * k3)
        y = _grouped_matmul(wmat, colmat, groups).reshape(n, o_total, *out_sp)
    if bias is not None:
        y = y + bias.data[None, :, None, None, None]

    def vjp(g):
        gmat = g.reshape(n, groups, og, npos)
        wmat_ = weight.data.reshape(groups, og, cg * k3)
        # windows of x are needed for the weight gradient on both paths
        local_cols = cols if cols is not None else _im2col(
            xpad, spec.kernel, spec.stride
        )
        colmat_ = local_cols.reshape(n, groups, cg * k3, npos)
        if groups == 1:
            gw = np.matmul(gmat[:, 0],
                           colmat_[:, 0].transpose(0, 2, 1)).sum(axis=0)
            gw = gw.reshape(weight.shape)
        else:
            gw = np.einsum("ngop,ngkp->gok", gmat,
                           colmat_).reshape(weight.shape)
        gcols = np.empty((n, groups, cg * k3, npos), dtype=g.dtype)
        for gi in range(groups):
            gcols[:, gi] = np.matmul(wmat_[gi].T, gmat[:, gi])
        gx = np.zeros_like(x.data)
        _kernels.col2im_scatter(
            gcols.reshape(n, cin, *spec.kernel, *out_sp),
            gx, *spec.stride, *spec.padding,
        )
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return record(y, parents, vjp)


def transposed_conv3d(x: Tensor, weight: Tensor, bias: Tensor | None,
                      spec: ConvSpec) -> Tensor:
    """Grouped transposed 3-d convolution (gradient of conv3d w.r.t. input).

    x [N, C, D, H, W], weight [C, O/groups, kd, kh, kw], bias [O] or None.
    Each input voxel scatters weight-shaped contributions onto the output
    at (pos*stride + k - padding).
    """
    _check_conv_args(x, weight, bias, spec, transposed=True)
    out_sp = spec.transposed_out_shape(x.shape[2:])
    groups = spec.groups
    n, cin = x.shape[:2]
    og = weight.shape[1]
    o_total = og * groups
    cg = cin // groups
    k3 = int(np.prod(spec.kernel))
    in_sp = tuple(x.shape[2:])
    npos = int(np.prod(in_sp))

    wmat = weight.data.reshape(groups, cg, og * k3)
    xmat = x.data.reshape(n, groups, cg, npos)
    cols = np.empty((n, groups, og * k3, npos), dtype=x.dtype)
    for g in range(groups):
        cols[:, g] = np.matmul(wmat[g].transpose(1, 0), xmat[:, g])
    pd, ph, pw = spec.padding
    ypad = np.zeros(
        (n, o_total, out_sp[0] + 2 * pd, out_sp[1] + 2 * ph,
         out_sp[2] + 2 * pw),
        dtype=x.dtype,
    )
    _kernels.col2im_scatter(
        cols.reshape(n, o_total, *spec.kernel, *in_sp),
        ypad, *spec.stride, 0, 0, 0,
    )
    y = ypad[:, :, pd:ypad.shape[2] - pd, ph:ypad.shape[3] - ph,
             pw:ypad.shape[4] - pw]
    y = np.ascontiguousarray(y)
    if bias is not None:
        y = y + bias.data[None, :, None, None, None]

    def vjp(g):
        gpad = _pad_spatial(g, spec.padding)
        gcols = _im2col(gpad, spec.kernel, spec.stride)
        gcolmat = gcols.reshape(n, groups, og * k3, npos)
        gx = np.empty_like(x.data).reshape(n, groups, cg, npos)
        for gi in range(groups):
            gx[:, gi] = np.matmul(wmat[gi], gcolmat[:, gi])
        if groups == 1:
            gw = np.matmul(xmat[:, 0],
                           gcolmat[:, 0].transpose(0, 2, 1)).sum(axis=0)
            gw = gw.reshape(weight.shape)
        else:
            gw = np.einsum("ngcp,ngkp->gck", xmat,
                           gcolmat).reshape(weight.shape)
        grads = [gx.reshape(x.shape), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return record(y, parents, vjp)


def causal_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Depthwise causal convolution along the sequence axis.

    x [B, L, E], weight [E, K], bias [E] or None. Position t sees inputs
    t-K+1 .. t; the left edge is zero padded so output length equals L.
    """
    if x.ndim != 3:
        raise ShapeError(f"expected [B,L,E] input, got rank {x.ndim}")
    if weight.ndim != 2 or weight.shape[0] != x.shape[2]:
        raise ShapeError(
            f"weight must be [E={x.shape[2]}, K], got {weight.shape}"
        )
    if bias is not None and bias.shape != (x.shape[2],):
        raise ShapeError(f"bias shape {bias.shape} does not match {x.shape[2]}"
                         f" channels")
    k = weight.shape[1]
    length = x.shape[1]
    # tap m reads input t - (k-1) + m; accumulate k shifted products
    y = x.data * weight.data[:, k - 1]
    for m in range(k - 1):
        shift = k - 1 - m
        y[:, shift:] += x.data[:, :length - shift] * weight.data[:, m]
    if bias is not None:
        y += bias.data

    def vjp(g):
        gw = np.empty_like(weight.data)
        gw[:, k - 1] = np.einsum("ble,ble->e", g, x.data)
        gx = g * weight.data[:, k - 1]
        for m in range(k - 1):
            shift = k - 1 - m
            gw[:, m] = np.einsum("ble,ble->e", g[:, shift:],
                                 x.data[:, :length - shift])
            gx[:, :length - shift] += g[:, shift:] * weight.data[:, m]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return record(y, parents, vjp)
