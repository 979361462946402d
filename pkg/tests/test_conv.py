"""Convolution semantics against brute-force loops, plus gradients."""

from itertools import product

import numpy as np
import pytest

from dmsegnet.core import ops
from dmsegnet.core.conv import (ConvSpec, causal_conv1d, conv3d,
                                transposed_conv3d)
from dmsegnet.core.gradcheck import max_relative_error
from dmsegnet.core.tensor import Tensor
from dmsegnet.errors import OpSpecError, ShapeError


def brute_conv3d(x, w, b, stride, padding, groups):
    """Scalar-loop cross-correlation oracle, [N,Ci,D,H,W] x [Co,Ci/g,k...]."""
    n, ci, d, h, wd = x.shape
    co, cig, kd, kh, kw = w.shape
    pd, ph, pw = padding
    sd, sh, sw = stride
    xp = np.pad(x, [(0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)])
    od = (d + 2 * pd - kd) // sd + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, co, od, oh, ow), dtype=x.dtype)
    out_per_g = co // groups
    for ni, oc, zi, yi, xi in product(range(n), range(co), range(od),
                                      range(oh), range(ow)):
        gi = oc // out_per_g
        acc = 0.0
        for icg, a, bb, c in product(range(cig), range(kd), range(kh),
                                     range(kw)):
            acc += (xp[ni, gi * cig + icg, zi * sd + a, yi * sh + bb,
                       xi * sw + c] * w[oc, icg, a, bb, c])
        out[ni, oc, zi, yi, xi] = acc + (b[oc] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("stride,padding,groups,bias", [
    ((1, 1, 1), (0, 0, 0), 1, True),
    ((1, 1, 1), (1, 1, 1), 1, False),
    ((2, 2, 2), (1, 1, 1), 1, True),
    ((1, 2, 1), (0, 1, 2), 1, True),
    ((1, 1, 1), (1, 1, 1), 2, True),
    ((2, 1, 2), (1, 0, 1), 4, False),
])
def test_conv3d_matches_brute_force(stride, padding, groups, bias):
    rng = np.random.default_rng(0)
    ci, co = 4, 8
    x = rng.standard_normal((2, ci, 5, 6, 4))
    w = rng.standard_normal((co, ci // groups, 3, 3, 3))
    b = rng.standard_normal(co) if bias else None
    spec = ConvSpec(kernel=(3, 3, 3), stride=stride, padding=padding,
                    groups=groups)
    got = conv3d(Tensor(x, dtype=np.float64),
                 Tensor(w, dtype=np.float64),
                 Tensor(b, dtype=np.float64) if bias else None, spec)
    want = brute_conv3d(x, w, b, stride, padding, groups)
    assert np.max(np.abs(got.data - want)) < 1e-12


def test_conv3d_anisotropic_kernel():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 5, 6))
    w = rng.standard_normal((3, 2, 1, 3, 2))
    spec = ConvSpec(kernel=(1, 3, 2), padding=(0, 1, 0))
    got = conv3d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                 None, spec)
    want = brute_conv3d(x, w, None, (1, 1, 1), (0, 1, 0), 1)
    assert got.shape == want.shape
    assert np.max(np.abs(got.data - want)) < 1e-12


def test_conv3d_shape_errors():
    x = Tensor(np.zeros((1, 4, 4, 4, 4)), dtype=np.float64)
    w = Tensor(np.zeros((8, 4, 3, 3, 3)), dtype=np.float64)
    with pytest.raises(ShapeError):
        conv3d(x, Tensor(np.zeros((8, 3, 3, 3, 3))), None,
               ConvSpec(kernel=3))
    with pytest.raises(ShapeError):
        # 4*3 != 4 input channels under groups=3
        conv3d(x, w, None, ConvSpec(kernel=3, groups=3))
    with pytest.raises(OpSpecError):
        ConvSpec(kernel=0)
    with pytest.raises(OpSpecError):
        ConvSpec(kernel=3, stride=0)
    with pytest.raises(OpSpecError):
        # kernel larger than padded input
        conv3d(x, Tensor(np.zeros((8, 4, 5, 3, 3))), None,
               ConvSpec(kernel=(5, 3, 3)))


def test_conv3d_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((1, 2, 4, 4, 4)), requires_grad=True,
               dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 2, 3, 3, 3)), requires_grad=True,
               dtype=np.float64)
    b = Tensor(rng.standard_normal(4), requires_grad=True, dtype=np.float64)
    probe = Tensor(rng.standard_normal((1, 4, 2, 2, 2)), dtype=np.float64)
    spec = ConvSpec(kernel=3, stride=2, padding=1)

    def f(xx, ww, bb):
        return ops.tsum(ops.mul(conv3d(xx, ww, bb, spec), probe))

    assert max_relative_error(f, [x, w, b]) < 1e-7


def test_conv3d_grouped_gradients():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((1, 4, 3, 3, 3)), requires_grad=True,
               dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 1, 3, 3, 3)), requires_grad=True,
               dtype=np.float64)
    probe = Tensor(rng.standard_normal((1, 4, 3, 3, 3)), dtype=np.float64)
    spec = ConvSpec(kernel=3, padding=1, groups=4)

    def f(xx, ww):
        return ops.tsum(ops.mul(conv3d(xx, ww, None, spec), probe))

    assert max_relative_error(f, [x, w]) < 1e-6


def brute_transposed(x, w, stride, padding):
    """Scatter oracle: place x[n,ci,z,y,x] * w[ci,co,...] into the output."""
    n, ci, d, h, wd = x.shape
    _, co, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    od = (d - 1) * sd - 2 * pd + kd
    oh = (h - 1) * sh - 2 * ph + kh
    ow = (wd - 1) * sw - 2 * pw + kw
    full = np.zeros((n, co, od + 2 * pd, oh + 2 * ph, ow + 2 * pw),
                    dtype=x.dtype)
    for ni, ic, zi, yi, xi in product(range(n), range(ci), range(d),
                                      range(h), range(wd)):
        v = x[ni, ic, zi, yi, xi]
        for oc, a, bb, c in product(range(co), range(kd), range(kh),
                                    range(kw)):
            full[ni, oc, zi * sd + a, yi * sh + bb, xi * sw + c] \
                += v * w[ic, oc, a, bb, c]
    return full[:, :, pd:pd + od, ph:ph + oh, pw:pw + ow]


@pytest.mark.parametrize("stride,padding", [
    ((1, 1, 1), (0, 0, 0)),
    ((2, 2, 2), (0, 0, 0)),
    ((2, 2, 2), (1, 1, 1)),
    ((1, 2, 2), (0, 1, 0)),
])
def test_transposed_conv3d_matches_brute_force(stride, padding):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 3, 3, 4, 3))
    w = rng.standard_normal((3, 5, 2, 2, 2))
    spec = ConvSpec(kernel=(2, 2, 2), stride=stride, padding=padding)
    got = transposed_conv3d(Tensor(x, dtype=np.float64),
                            Tensor(w, dtype=np.float64), None, spec)
    want = brute_transposed(x, w, stride, padding)
    assert got.shape == want.shape
    assert np.max(np.abs(got.data - want)) < 1e-12


def test_transposed_conv3d_inverts_strided_shape():
    # stride-2 kernel-2 transpose exactly doubles the spatial dims
    x = Tensor(np.zeros((1, 4, 3, 5, 7)), dtype=np.float64)
    w = Tensor(np.zeros((4, 2, 2, 2, 2)), dtype=np.float64)
    out = transposed_conv3d(x, w, None, ConvSpec(kernel=2, stride=2))
    assert out.shape == (1, 2, 6, 10, 14)


def test_transposed_conv3d_gradients():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((1, 3, 3, 3, 3)), requires_grad=True,
               dtype=np.float64)
    w = Tensor(rng.standard_normal((3, 2, 2, 2, 2)), requires_grad=True,
               dtype=np.float64)
    b = Tensor(rng.standard_normal(2), requires_grad=True, dtype=np.float64)
    probe = Tensor(rng.standard_normal((1, 2, 6, 6, 6)), dtype=np.float64)
    spec = ConvSpec(kernel=2, stride=2)

    def f(xx, ww, bb):
        return ops.tsum(ops.mul(transposed_conv3d(xx, ww, bb, spec), probe))

    assert max_relative_error(f, [x, w, b]) < 1e-7


def brute_causal_conv1d(x, w, b):
    """out[n,t,e] = sum_k x[n, t-K+1+k, e] * w[e,k] + b[e], zero history."""
    n, l, e = x.shape
    k = w.shape[1]
    out = np.zeros_like(x)
    for ni, t, ei in product(range(n), range(l), range(e)):
        acc = 0.0
        for kk in range(k):
            src = t - (k - 1) + kk
            if src >= 0:
                acc += x[ni, src, ei] * w[ei, kk]
        out[ni, t, ei] = acc + b[ei]
    return out


def test_causal_conv1d_matches_brute_force():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 9, 3))
    w = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)
    got = causal_conv1d(Tensor(x, dtype=np.float64),
                        Tensor(w, dtype=np.float64),
                        Tensor(b, dtype=np.float64))
    assert np.max(np.abs(got.data - brute_causal_conv1d(x, w, b))) < 1e-12


def test_causal_conv1d_is_causal():
    # changing the future must not change the past
    rng = np.random.default_rng(7)
    x1 = rng.standard_normal((1, 8, 2))
    x2 = x1.copy()
    x2[0, 5:] += 10.0
    w = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
    b = Tensor(np.zeros(2), dtype=np.float64)
    y1 = causal_conv1d(Tensor(x1, dtype=np.float64), w, b).data
    y2 = causal_conv1d(Tensor(x2, dtype=np.float64), w, b).data
    assert np.array_equal(y1[:, :5], y2[:, :5])
    assert not np.array_equal(y1[:, 5:], y2[:, 5:])


def test_causal_conv1d_gradients():
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal((1, 6, 2)), requires_grad=True,
               dtype=np.float64)
    w = Tensor(rng.standard_normal((2, 3)), requires_grad=True,
               dtype=np.float64)
    b = Tensor(rng.standard_normal(2), requires_grad=True, dtype=np.float64)
    probe = Tensor(rng.standard_normal((1, 6, 2)), dtype=np.float64)

    def f(xx, ww, bb):
        return ops.tsum(ops.mul(causal_conv1d(xx, ww, bb), probe))

    assert max_relative_error(f, [x, w, b]) < 1e-7
