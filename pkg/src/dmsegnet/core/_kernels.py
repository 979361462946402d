"""Numba-compiled inner loops for the scatter and scan recurrences.

Everything here is dtype-generic: the JIT specializes on float32 for the
training path and float64 for verification runs. The selective-scan
kernels are the production implementation of the state recurrence; the
literal per-step reference lives in ``dmsegnet.ssm`` and stays numba-free.

The discretized transition exp(delta*A) is precomputed by the caller
with numpy's vectorized exp: a scalar exp in the inner loop defeats
SIMD and measures ~50% slower end to end on this workload.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def col2im_scatter(cols, out, sd, sh, sw, pd, ph, pw):
    """Scatter-add kernel windows back onto a voxel grid.

    cols: [N, C, KD, KH, KW, OD, OH, OW] window contributions
    out:  [N, C, D, H, W] preallocated accumulator
    Window (kd,kh,kw) of output position (od,oh,ow) lands on voxel
    (od*s + kd - p, ...); contributions falling into the padding margin
    are dropped.
    """
    n_, c_, kd_, kh_, kw_, od_, oh_, ow_ = cols.shape
    d_, h_, w_ = out.shape[2], out.shape[3], out.shape[4]
    for n in range(n_):
        for c in range(c_):
            for kd in range(kd_):
                for kh in range(kh_):
                    for kw in range(kw_):
                        for od in range(od_):
                            d = od * sd + kd - pd
                            if d < 0 or d >= d_:
                                continue
                            for oh in range(oh_):
                                h = oh * sh + kh - ph
                                if h < 0 or h >= h_:
                                    continue
                                for ow in range(ow_):
                                    w = ow * sw + kw - pw
                                    if 0 <= w < w_:
                                        out[n, c, d, h, w] += cols[
                                            n, c, kd, kh, kw, od, oh, ow
                                        ]


@njit(cache=True, fastmath=True)
def scan_forward(abar, dt, x, bseq, cseq, dskip, h_out, y_out):
    """Sequential selective-scan recurrence, one pass over t.

    abar:  [B, L, E, N] discretized transition exp(dt*A), precomputed
    dt:    [B, L, E]    per-position step size (> 0)
    x:     [B, L, E]    input sequence
    bseq:  [B, L, N]    per-position input projection
    cseq:  [B, L, N]    per-position readout projection
    dskip: [E]          skip gain
    h_out: [B, L, E, N] stores every state for the backward pass
    y_out: [B, L, E]    readout
    """
    b_, l_, e_ = x.shape
    n_ = abar.shape[3]
    for b in range(b_):
        h = np.zeros((e_, n_), dtype=x.dtype)
        for t in range(l_):
            for e in range(e_):
                drive = dt[b, t, e] * x[b, t, e]
                acc = 0.0
                for n in range(n_):
                    hv = abar[b, t, e, n] * h[e, n] + drive * bseq[b, t, n]
                    h[e, n] = hv
                    h_out[b, t, e, n] = hv
                    acc += cseq[b, t, n] * hv
                y_out[b, t, e] = acc + dskip[e] * x[b, t, e]


@njit(cache=True, fastmath=True)
def scan_forward_eval(abar, dt, x, bseq, cseq, dskip, y_out):
    """scan_forward without storing the state history (inference path)."""
    b_, l_, e_ = x.shape
    n_ = abar.shape[3]
    for b in range(b_):
        h = np.zeros((e_, n_), dtype=x.dtype)
        for t in range(l_):
            for e in range(e_):
                drive = dt[b, t, e] * x[b, t, e]
                acc = 0.0
                for n in range(n_):
                    hv = abar[b, t, e, n] * h[e, n] + drive * bseq[b, t, n]
                    h[e, n] = hv
                    acc += cseq[b, t, n] * hv
                y_out[b, t, e] = acc + dskip[e] * x[b, t, e]


@njit(cache=True, fastmath=True)
def scan_backward(gy, h, abar, dt, x, bseq, cseq, dskip, a_mat,
                  gx, gdt, ga, gb, gc, gd):
    """Adjoint of :func:`scan_forward`; reverse pass over t.

    All g* buffers must be zero-initialized; ga/gd accumulate across the
    batch, the per-position buffers are written once per (b, t).
    """
    b_, l_, e_ = x.shape
    n_ = abar.shape[3]
    for b in range(b_):
        gh = np.zeros((e_, n_), dtype=x.dtype)
        for t in range(l_ - 1, -1, -1):
            for e in range(e_):
                gye = gy[b, t, e]
                dte = dt[b, t, e]
                xe = x[b, t, e]
                gd[e] += gye * xe
                gx_acc = gye * dskip[e]
                gdt_acc = 0.0
                for n in range(n_):
                    ab = abar[b, t, e, n]
                    ghv = gh[e, n] + gye * cseq[b, t, n]
                    gc[b, t, n] += gye * h[b, t, e, n]
                    hprev = h[b, t - 1, e, n] if t > 0 else 0.0
                    gabar = ghv * hprev * ab
                    gdt_acc += gabar * a_mat[e, n]
                    ga[e, n] += gabar * dte
                    gb[b, t, n] += ghv * dte * xe
                    gdt_acc += ghv * bseq[b, t, n] * xe
                    gx_acc += ghv * dte * bseq[b, t, n]
                    gh[e, n] = ghv * ab
                gx[b, t, e] = gx_acc
                gdt[b, t, e] = gdt_acc


def warm_up(dtype=np.float32) -> None:
    """Trigger JIT compilation on tiny inputs so first real use is fast."""
    cols = np.zeros((1, 1, 1, 1, 1, 1, 1, 1), dtype=dtype)
    out = np.zeros((1, 1, 1, 1, 1), dtype=dtype)
    col2im_scatter(cols, out, 1, 1, 1, 0, 0, 0)
    abar = np.ones((1, 2, 1, 1), dtype=dtype)
    vec = np.zeros((1, 2, 1), dtype=dtype)
    mat = np.zeros((1, 1), dtype=dtype)
    one = np.zeros(1, dtype=dtype)
    h = np.zeros_like(abar)
    scan_forward(abar, vec, vec, vec, vec, one, h, vec.copy())
    scan_forward_eval(abar, vec, vec, vec, vec, one, vec.copy())
    scan_backward(vec, h, abar, vec, vec, vec, one, mat,
                  vec.copy(), vec.copy(), mat.copy(), vec.copy(), vec.copy(),
                  one.copy())
