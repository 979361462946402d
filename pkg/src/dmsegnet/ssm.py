"""Selective state-space recurrence and the sequence block built on it.

The recurrence over a length-L sequence with inner width E and state
size N is

    h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) * x_t
    y_t = <C_t, h_t> + D * x_t

with delta, B, C derived from the input at every position (the
"selective" part) and A = -exp(A_log) kept strictly negative so the
state decays. ``selective_scan`` is the production path (numba kernels,
fused discretization); ``selective_scan_reference`` is a deliberately
naive per-step loop kept as an independent check.
"""

import math

import numpy as np

from .core import _kernels, ops
from .core.conv import causal_conv1d
from .core.module import Module
from .core.norm import rms_norm
from .core.tensor import Parameter, Tensor, is_grad_enabled, record
from .errors import ShapeError

# scratch buffers for scan history/transition arrays, recycled across steps
# to avoid re-faulting hundreds of MB of fresh pages every call
_SCRATCH: dict[tuple, list[np.ndarray]] = {}


def _acquire(shape, dtype) -> np.ndarray:
    stack = _SCRATCH.get((shape, np.dtype(dtype).char))
    if stack:
        return stack.pop()
    return np.empty(shape, dtype=dtype)


def _release(*arrays) -> None:
    for arr in arrays:
        _SCRATCH.setdefault((arr.shape, arr.dtype.char), []).append(arr)


def discretize(delta, a, b):
    """Zero-order-hold transition and simplified-Euler input terms.

    delta [..., L, E] (> 0 required), a [E, N], b [..., L, N] ->
    (abar, bbar) each [..., L, E, N] where abar = exp(delta*a) and
    bbar = delta*b broadcast over E. Accepts Tensors or ndarrays,
    returns ndarrays.
    """
    delta = delta.data if isinstance(delta, Tensor) else np.asarray(delta)
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    if not np.all(delta > 0):
        raise ValueError("delta must be strictly positive")
    abar = np.exp(delta[..., None] * a)
    bbar = delta[..., None] * b[..., None, :]
    return abar, bbar


def _check_scan_shapes(x, delta, a, b_seq, c_seq, d_skip):
    if x.ndim not in (2, 3):
        raise ShapeError(f"x must be [L,E] or [B,L,E], got rank {x.ndim}")
    batched = x.ndim == 3
    b_, l_, e_ = x.shape if batched else (1, *x.shape)
    if a.ndim != 2 or a.shape[0] != e_:
        raise ShapeError(f"A must be [E={e_}, N], got {a.shape}")
    n_ = a.shape[1]
    want = {
        "delta": (b_, l_, e_) if batched else (l_, e_),
        "B_seq": (b_, l_, n_) if batched else (l_, n_),
        "C_seq": (b_, l_, n_) if batched else (l_, n_),
    }
    for name, t in (("delta", delta), ("B_seq", b_seq), ("C_seq", c_seq)):
        if t.shape != want[name]:
            raise ShapeError(f"{name} must have shape {want[name]}, got "
                             f"{t.shape}")
    if d_skip.shape != (e_,):
        raise ShapeError(f"D_skip must have shape ({e_},), got {d_skip.shape}")
    dtypes = {t.dtype for t in (x, delta, a, b_seq, c_seq, d_skip)}
    if len(dtypes) != 1:
        raise ShapeError(f"scan inputs must share one dtype, got {dtypes}")
    return batched, b_, l_, e_, n_


def selective_scan(x: Tensor, delta: Tensor, a: Tensor, b_seq: Tensor,
                   c_seq: Tensor, d_skip: Tensor) -> Tensor:
    """Run the recurrence over every sequence in the batch; autodiff-aware.

    x [B, L, E] or [L, E]; delta matches x; a [E, N]; b_seq/c_seq
    [B, L, N] or [L, N]; d_skip [E]. Single O(L*E*N) pass per sequence.
    """
    batched, b_, l_, e_, n_ = _check_scan_shapes(x, delta, a, b_seq, c_seq,
                                                 d_skip)
    dt = x.dtype
    xv = np.ascontiguousarray(x.data.reshape(b_, l_, e_))
    dv = np.ascontiguousarray(delta.data.reshape(b_, l_, e_))
    bv = np.ascontiguousarray(b_seq.data.reshape(b_, l_, n_))
    cv = np.ascontiguousarray(c_seq.data.reshape(b_, l_, n_))
    av = np.ascontiguousarray(a.data)
    sv = np.ascontiguousarray(d_skip.data)
    abar = _acquire((b_, l_, e_, n_), dt)
    np.multiply(dv[..., None], av, out=abar)
    np.exp(abar, out=abar)
    y = np.empty((b_, l_, e_), dtype=dt)
    recording = is_grad_enabled() and any(
        t.requires_grad for t in (x, delta, a, b_seq, c_seq, d_skip)
    )
    if not recording:
        _kernels.scan_forward_eval(abar, dv, xv, bv, cv, sv, y)
        _release(abar)
        return Tensor(y if batched else y[0])
    h = _acquire((b_, l_, e_, n_), dt)
    _kernels.scan_forward(abar, dv, xv, bv, cv, sv, h, y)
    scratch = [abar, h]  # released on first backward pass only

    def vjp(g):
        g = np.ascontiguousarray(g.reshape(b_, l_, e_))
        gx = np.zeros_like(xv)
        gdt = np.zeros_like(dv)
        ga = np.zeros_like(a.data)
        gb = np.zeros_like(bv)
        gc = np.zeros_like(cv)
        gd = np.zeros_like(sv)
        _kernels.scan_backward(g, h, abar, dv, xv, bv, cv, sv, av,
                               gx, gdt, ga, gb, gc, gd)
        if scratch:
            _release(*scratch)
            scratch.clear()
        if not batched:
            gx, gdt = gx[0], gdt[0]
            gb, gc = gb[0], gc[0]
        return [gx, gdt, ga, gb, gc, gd]

    out = y if batched else y[0]
    return record(out, [x, delta, a, b_seq, c_seq, d_skip], vjp)


def selective_scan_reference(x, delta, a, b_seq, c_seq, d_skip) -> np.ndarray:
    """Most literal per-step loop; verification twin of selective_scan.

    Operates on plain float arrays, no autodiff, no compiled kernels.
    """
    arr = [np.asarray(t.data if isinstance(t, Tensor) else t)
           for t in (x, delta, a, b_seq, c_seq, d_skip)]
    x, delta, a, b_seq, c_seq, d_skip = arr
    batched = x.ndim == 3
    if not batched:
        x, delta = x[None], delta[None]
        b_seq, c_seq = b_seq[None], c_seq[None]
    b_, l_, e_ = x.shape
    n_ = a.shape[1]
    y = np.zeros_like(x)
    for bi in range(b_):
        h = np.zeros((e_, n_), dtype=x.dtype)
        for t in range(l_):
            abar = np.exp(delta[bi, t][:, None] * a)
            bbar = delta[bi, t][:, None] * b_seq[bi, t][None, :]
            h = abar * h + bbar * x[bi, t][:, None]
            y[bi, t] = h @ c_seq[bi, t] + d_skip * x[bi, t]
    return y if batched else y[0]


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class MambaBlock(Module):
    """Pre-norm residual sequence block around the selective scan.

    [N, L, C] -> [N, L, C]. The input projection doubles the width into a
    value branch and a gate branch; the value branch passes through a
    depthwise causal conv, SiLU, and the scan; the gate modulates the
    result before projecting back to C.
    """

    def __init__(self, dim: int, state_dim: int = 16, expand: int = 2,
                 conv_width: int = 4, dt_rank: int | None = None,
                 dt_min: float = 1e-3, dt_max: float = 0.1,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if dim < 1 or state_dim < 1 or expand < 1 or conv_width < 1:
            raise ShapeError("dim, state_dim, expand, conv_width must be "
                             ">= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.state_dim = state_dim
        self.expand = expand
        self.conv_width = conv_width
        self.inner = expand * dim
        self.dt_rank = dt_rank if dt_rank is not None else math.ceil(dim / 16)
        e, n, r = self.inner, state_dim, self.dt_rank

        self.norm_gain = Parameter(np.ones(dim, dtype=dtype))
        self.in_proj = Parameter(_uniform(rng, dim ** -0.5, (2 * e, dim),
                                          dtype))
        self.conv_w = Parameter(_uniform(rng, conv_width ** -0.5,
                                         (e, conv_width), dtype))
        self.conv_b = Parameter(_uniform(rng, conv_width ** -0.5, (e,),
                                         dtype))
        self.x_proj = Parameter(_uniform(rng, e ** -0.5, (r + 2 * n, e),
                                         dtype))
        self.dt_proj = Parameter(_uniform(rng, r ** -0.5, (e, r), dtype))
        # bias chosen so softplus(bias) lands log-uniformly in [dt_min, dt_max]
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=e))
        dt = np.maximum(dt, 1e-4)
        self.dt_bias = Parameter((dt + np.log(-np.expm1(-dt))).astype(dtype))
        # log-spaced decay rates per state channel; A = -exp(A_log) < 0
        a_init = np.tile(np.arange(1, n + 1, dtype=np.float64), (e, 1))
        self.a_log = Parameter(np.log(a_init).astype(dtype))
        self.d_skip = Parameter(np.ones(e, dtype=dtype))
        self.out_proj = Parameter(_uniform(rng, e ** -0.5, (dim, e), dtype))

    def forward(self, seq: Tensor) -> Tensor:
        if seq.ndim != 3 or seq.shape[2] != self.dim:
            raise ShapeError(
                f"expected [N, L, {self.dim}] input, got {seq.shape}"
            )
        e, n, r = self.inner, self.state_dim, self.dt_rank
        u = rms_norm(seq, self.norm_gain)
        uv = ops.linear(u, self.in_proj)
        val, gate = ops.split(uv, [e, e], axis=2)
        val = ops.silu(causal_conv1d(val, self.conv_w, self.conv_b))
        proj = ops.linear(val, self.x_proj)
        dt_pre, b_seq, c_seq = ops.split(proj, [r, n, n], axis=2)
        dt = ops.softplus(ops.linear(dt_pre, self.dt_proj, self.dt_bias))
        a = ops.neg(ops.exp(self.a_log))
        y = selective_scan(val, dt, a, b_seq, c_seq, self.d_skip)
        y = ops.mul(y, ops.silu(gate))
        return ops.add(ops.linear(y, self.out_proj), seq)
