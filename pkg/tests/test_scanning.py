"""Traversal orders: index formulas, bijectivity, tensor round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmsegnet.core import ops
from dmsegnet.core.gradcheck import max_relative_error
from dmsegnet.core.tensor import Tensor
from dmsegnet.errors import ShapeError
from dmsegnet.scanning import (ALL_ORDERS, ScanOrder, VolumeDims,
                               coordinate_of, flatten, index_map,
                               linear_index, unflatten)

dims_st = st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))


def test_linear_index_enumeration():
    # hand enumeration on a 2x2x2 cube, all four orders
    dims = VolumeDims(2, 2, 2)
    fwd = {(0, 0, 0): 0, (0, 0, 1): 1, (0, 1, 0): 2, (0, 1, 1): 3,
           (1, 0, 0): 4, (1, 0, 1): 5, (1, 1, 0): 6, (1, 1, 1): 7}
    inter = {(0, 0, 0): 0, (1, 0, 0): 1, (0, 0, 1): 2, (1, 0, 1): 3,
             (0, 1, 0): 4, (1, 1, 0): 5, (0, 1, 1): 6, (1, 1, 1): 7}
    for pos, l in fwd.items():
        assert linear_index(ScanOrder.FORWARD, pos, dims) == l
        assert linear_index(ScanOrder.REVERSE, pos, dims) == 7 - l
    for pos, l in inter.items():
        assert linear_index(ScanOrder.INTERSLICE, pos, dims) == l
        assert linear_index(ScanOrder.REVERSE_INTERSLICE, pos, dims) == 7 - l


def test_linear_index_strides():
    # forward: w varies fastest, then h, then d
    dims = VolumeDims(3, 4, 5)
    assert linear_index(ScanOrder.FORWARD, (0, 0, 1), dims) == 1
    assert linear_index(ScanOrder.FORWARD, (0, 1, 0), dims) == 5
    assert linear_index(ScanOrder.FORWARD, (1, 0, 0), dims) == 20
    # interslice: d varies fastest
    assert linear_index(ScanOrder.INTERSLICE, (1, 0, 0), dims) == 1
    assert linear_index(ScanOrder.INTERSLICE, (0, 0, 1), dims) == 3
    assert linear_index(ScanOrder.INTERSLICE, (0, 1, 0), dims) == 15


def test_linear_index_bounds():
    dims = VolumeDims(2, 2, 2)
    with pytest.raises(IndexError):
        linear_index(ScanOrder.FORWARD, (2, 0, 0), dims)
    with pytest.raises(IndexError):
        coordinate_of(ScanOrder.FORWARD, 8, dims)
    with pytest.raises(ShapeError):
        VolumeDims(0, 1, 1)


@settings(max_examples=60, deadline=None)
@given(dims_st, st.sampled_from(ALL_ORDERS))
def test_coordinate_of_inverts_linear_index(raw, order):
    dims = VolumeDims(*raw)
    for l in range(dims.length):
        pos = coordinate_of(order, l, dims)
        assert linear_index(order, pos, dims) == l


@settings(max_examples=60, deadline=None)
@given(dims_st, st.sampled_from(ALL_ORDERS))
def test_index_map_is_bijection(raw, order):
    dims = VolumeDims(*raw)
    m = index_map(order, dims)
    assert m.shape == (dims.d, dims.h, dims.w)
    assert np.array_equal(np.sort(m.ravel()), np.arange(dims.length))


@settings(max_examples=60, deadline=None)
@given(dims_st, st.sampled_from(ALL_ORDERS))
def test_flatten_places_voxels_at_linear_index(raw, order):
    dims = VolumeDims(*raw)
    rng = np.random.default_rng(dims.length)
    vol = rng.standard_normal((1, 2, dims.d, dims.h, dims.w))
    seq = flatten(Tensor(vol, dtype=np.float64), order).data
    m = index_map(order, dims)
    for d in range(dims.d):
        for h in range(dims.h):
            for w in range(dims.w):
                assert np.array_equal(seq[0, m[d, h, w]], vol[0, :, d, h, w])


@settings(max_examples=60, deadline=None)
@given(dims_st, st.sampled_from(ALL_ORDERS))
def test_unflatten_inverts_flatten(raw, order):
    dims = VolumeDims(*raw)
    rng = np.random.default_rng(dims.length + 1)
    vol = Tensor(rng.standard_normal((2, 3, dims.d, dims.h, dims.w)),
                 dtype=np.float64)
    back = unflatten(flatten(vol, order), order, dims)
    assert np.array_equal(back.data, vol.data)


def test_reverse_is_sequence_flip():
    dims = VolumeDims(2, 3, 4)
    rng = np.random.default_rng(0)
    vol = Tensor(rng.standard_normal((1, 2, 2, 3, 4)), dtype=np.float64)
    fwd = flatten(vol, ScanOrder.FORWARD).data
    rev = flatten(vol, ScanOrder.REVERSE).data
    assert np.array_equal(rev, fwd[:, ::-1])


def test_order_metadata():
    assert ScanOrder.REVERSE.base is ScanOrder.FORWARD
    assert ScanOrder.REVERSE_INTERSLICE.base is ScanOrder.INTERSLICE
    assert ScanOrder.FORWARD.base is ScanOrder.FORWARD
    assert not ScanOrder.INTERSLICE.reversed_variant
    assert len(ALL_ORDERS) == 4


def test_flatten_shape_errors():
    with pytest.raises(ShapeError):
        flatten(Tensor(np.zeros((2, 3, 4))), ScanOrder.FORWARD)
    with pytest.raises(ShapeError):
        unflatten(Tensor(np.zeros((1, 9, 2))), ScanOrder.FORWARD,
                  VolumeDims(2, 2, 2))


def test_flatten_gradients_flow_through_inverse():
    rng = np.random.default_rng(1)
    dims = VolumeDims(2, 3, 2)
    probe = Tensor(rng.standard_normal((1, 12, 2)), dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 2, 2, 3, 2)), requires_grad=True,
               dtype=np.float64)

    def f(t):
        return ops.tsum(ops.mul(flatten(t, ScanOrder.REVERSE_INTERSLICE),
                                probe))

    assert max_relative_error(f, [x]) < 1e-8
    # the analytic gradient of a permutation is the inverse permutation
    x.grad = None
    f(x).backward()
    m = index_map(ScanOrder.REVERSE_INTERSLICE, dims)
    want = probe.data[0][m]  # [D,H,W,C]
    assert np.array_equal(x.grad[0], want.transpose(3, 0, 1, 2))
