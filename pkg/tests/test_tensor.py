"""Tape mechanics: recording, backward traversal, accumulation."""

import numpy as np
import pytest

from dmsegnet.core import ops
from dmsegnet.core.tensor import (Parameter, Tensor, check_finite,
                                  is_grad_enabled, no_grad, record)
from dmsegnet.errors import AutodiffError, ShapeError


def test_tensor_wraps_floats_only():
    t = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3))
    assert t.dtype == np.float32
    t64 = Tensor(np.zeros(3), dtype=np.float64)
    assert t64.dtype == np.float64


def test_scalar_backward_fills_leaf_grad():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True, dtype=np.float64)
    y = ops.tsum(ops.mul(x, x))
    y.backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.mul(x, x)
    with pytest.raises(AutodiffError):
        y.backward()


def test_backward_on_unrecorded_tensor_raises():
    with pytest.raises(AutodiffError):
        Tensor(np.zeros(1)).backward()


def test_repeated_backward_accumulates():
    x = Tensor([2.0], requires_grad=True, dtype=np.float64)
    y = ops.tsum(ops.mul(x, x))
    y.backward()
    first = x.grad.copy()
    y.backward()
    assert np.array_equal(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


def test_diamond_graph_visits_each_node_once():
    # f = (x*x) + (x*x) shares one subexpression; grad must be 4x, not 8x
    x = Tensor([3.0], requires_grad=True, dtype=np.float64)
    sq = ops.mul(x, x)
    y = ops.tsum(ops.add(sq, sq))
    y.backward()
    assert np.allclose(x.grad, 4 * x.data)


def test_no_grad_suppresses_recording():
    x = Tensor(np.ones(4), requires_grad=True)
    assert is_grad_enabled()
    with no_grad():
        assert not is_grad_enabled()
        y = ops.mul(x, x)
    assert is_grad_enabled()
    assert not y.requires_grad and y._vjp is None


def test_record_skips_tape_without_grad_parents():
    a = Tensor(np.ones(2))
    out = record(a.data * 2, (a,), lambda g: (g,))
    assert not out.requires_grad


def test_broadcast_add_unbroadcasts_gradient():
    x = Tensor(np.ones((2, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    ops.tsum(ops.add(x, b)).backward()
    assert x.grad.shape == (2, 3) and np.all(x.grad == 1)
    assert b.grad.shape == (3,) and np.all(b.grad == 2)


def test_parameter_is_grad_leaf():
    p = Parameter(np.zeros(3))
    assert p.requires_grad


def test_operator_sugar_matches_ops():
    a = Tensor([1.0, 2.0], dtype=np.float64)
    b = Tensor([3.0, 4.0], dtype=np.float64)
    assert np.array_equal((a + b).data, ops.add(a, b).data)
    assert np.array_equal((a - b).data, ops.sub(a, b).data)
    assert np.array_equal((a * b).data, ops.mul(a, b).data)
    assert np.array_equal((-a).data, ops.neg(a).data)
    assert np.array_equal((a / 2).data, a.data / 2)
    with pytest.raises(AutodiffError):
        a / b


def test_detach_breaks_graph():
    x = Tensor([1.0], requires_grad=True)
    d = ops.mul(x, x).detach()
    assert not d.requires_grad


def test_check_finite():
    check_finite(Tensor([1.0]))
    with pytest.raises(ShapeError):
        check_finite(Tensor([np.nan]), "loss")


def test_vjp_shape_mismatch_is_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    bad = record(x.data.sum(keepdims=True)[:1], (x,),
                 lambda g: (np.ones(2),))
    with pytest.raises(AutodiffError):
        bad.backward()
