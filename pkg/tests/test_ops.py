"""Forward semantics and gradients of the differentiable primitives."""

import math

import numpy as np
import pytest

from dmsegnet.core import ops
from dmsegnet.core.gradcheck import max_relative_error
from dmsegnet.core.norm import instance_norm, rms_norm
from dmsegnet.core.tensor import Parameter, Tensor
from dmsegnet.errors import ShapeError

TOL = 1e-7


def t64(rng, *shape, grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=grad,
                  dtype=np.float64)


def weighted(rng, shape):
    """Fixed random weights so reductions probe every output coordinate."""
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def test_arithmetic_forward():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert np.array_equal(ops.add(Tensor(a, dtype=np.float64),
                                  Tensor(b, dtype=np.float64)).data, a + b)
    assert np.array_equal(ops.sub(Tensor(a, dtype=np.float64),
                                  Tensor(b, dtype=np.float64)).data, a - b)
    assert np.array_equal(ops.mul(Tensor(a, dtype=np.float64),
                                  Tensor(b, dtype=np.float64)).data, a * b)
    assert np.array_equal(ops.neg(Tensor(a, dtype=np.float64)).data, -a)
    assert np.allclose(ops.exp(Tensor(a, dtype=np.float64)).data, np.exp(a))


def test_reduction_forward():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 3, 4))
    t = Tensor(a, dtype=np.float64)
    assert np.allclose(ops.tsum(t).data, a.sum())
    assert np.allclose(ops.tsum(t, axis=1).data, a.sum(axis=1))
    assert np.allclose(ops.tmean(t, axis=(0, 2)).data, a.mean(axis=(0, 2)))
    assert ops.tsum(t, axis=1, keepdims=True).shape == (2, 1, 4)


def _case(name, rng):
    """(scalar fn, inputs) pairs; weights are fixed outside the closure so
    repeated evaluations during finite differencing see one function."""
    if name == "add":
        return lambda a, b: ops.tsum(ops.add(a, b)), \
            [t64(rng, 3, 4), t64(rng, 4)]
    if name == "sub":
        return lambda a, b: ops.tsum(ops.sub(a, b)), \
            [t64(rng, 3, 4), t64(rng, 3, 1)]
    if name == "mul":
        return lambda a, b: ops.tsum(ops.mul(a, b)), \
            [t64(rng, 3, 4), t64(rng, 4)]
    if name == "neg":
        return lambda a: ops.tsum(ops.neg(a)), [t64(rng, 5)]
    if name == "exp":
        return lambda a: ops.tsum(ops.exp(a)), [t64(rng, 5)]
    if name == "sum_axis":
        w = weighted(rng, (2, 4))
        return lambda a: ops.tsum(ops.mul(ops.tsum(a, axis=1), w)), \
            [t64(rng, 2, 3, 4)]
    if name == "mean":
        w = weighted(rng, (1, 4))
        return (lambda a: ops.tsum(ops.mul(
            ops.tmean(a, axis=0, keepdims=True), w)), [t64(rng, 3, 4)])
    if name == "reshape":
        w = weighted(rng, (6, 2))
        return lambda a: ops.tsum(ops.mul(ops.reshape(a, (6, 2)), w)), \
            [t64(rng, 3, 4)]
    if name == "permute":
        w = weighted(rng, (4, 2, 3))
        return lambda a: ops.tsum(ops.mul(ops.permute(a, (2, 0, 1)), w)), \
            [t64(rng, 2, 3, 4)]
    if name == "flip":
        w = weighted(rng, (2, 3))
        return lambda a: ops.tsum(ops.mul(ops.flip(a, 1), w)), \
            [t64(rng, 2, 3)]
    if name == "concat":
        w = weighted(rng, (2, 7))
        return (lambda a, b: ops.tsum(ops.mul(ops.concat([a, b], axis=1),
                                              w)),
                [t64(rng, 2, 3), t64(rng, 2, 4)])
    if name == "narrow":
        w = weighted(rng, (2, 2))
        return lambda a: ops.tsum(ops.mul(ops.narrow(a, 1, 1, 2), w)), \
            [t64(rng, 2, 5)]
    if name == "silu":
        return lambda a: ops.tsum(ops.silu(a)), [t64(rng, 9)]
    if name == "softplus":
        return lambda a: ops.tsum(ops.softplus(a)), [t64(rng, 9)]
    if name == "linear":
        w = weighted(rng, (2, 3, 5))
        return (lambda a, wt, b: ops.tsum(ops.mul(ops.linear(a, wt, b), w)),
                [t64(rng, 2, 3, 4), t64(rng, 5, 4), t64(rng, 5)])
    if name == "space_to_depth":
        w = weighted(rng, (1, 16, 1, 2, 1))
        return (lambda a: ops.tsum(ops.mul(ops.space_to_depth_3d(a, 2), w)),
                [t64(rng, 1, 2, 2, 4, 2)])
    if name == "depth_to_space":
        w = weighted(rng, (1, 2, 4, 2, 4))
        return (lambda a: ops.tsum(ops.mul(ops.depth_to_space_3d(a, 2), w)),
                [t64(rng, 1, 16, 2, 1, 2)])
    if name == "rms_norm":
        w = weighted(rng, (2, 3, 4))
        return (lambda a, g: ops.tsum(ops.mul(rms_norm(a, g), w)),
                [t64(rng, 2, 3, 4),
                 Parameter(rng.standard_normal(4), dtype=np.float64)])
    if name == "instance_norm":
        w = weighted(rng, (2, 3, 4, 2, 2))
        return (lambda a, s, b: ops.tsum(ops.mul(instance_norm(a, s, b), w)),
                [t64(rng, 2, 3, 4, 2, 2),
                 Parameter(rng.standard_normal(3), dtype=np.float64),
                 Parameter(rng.standard_normal(3), dtype=np.float64)])
    raise KeyError(name)


OP_NAMES = ["add", "sub", "mul", "neg", "exp", "sum_axis", "mean",
            "reshape", "permute", "flip", "concat", "narrow", "silu",
            "softplus", "linear", "space_to_depth", "depth_to_space",
            "rms_norm", "instance_norm"]


@pytest.mark.parametrize("name", OP_NAMES)
def test_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2 ** 31)
    fn, inputs = _case(name, rng)
    err = max_relative_error(fn, inputs, step=1e-5)
    assert err < TOL, f"{name}: relative error {err:.3e}"


def test_relu_gradient_off_kink():
    # keep inputs away from 0 where the subgradient is ambiguous
    rng = np.random.default_rng(3)
    vals = rng.uniform(0.5, 2.0, size=8) * rng.choice([-1.0, 1.0], size=8)
    x = Tensor(vals, requires_grad=True, dtype=np.float64)
    err = max_relative_error(lambda a: ops.tsum(ops.relu(a)), [x])
    assert err < TOL


def test_split_covers_and_grads():
    rng = np.random.default_rng(4)
    x = t64(rng, 2, 7)
    parts = ops.split(x, [2, 5], axis=1)
    assert [p.shape for p in parts] == [(2, 2), (2, 5)]
    back = ops.concat(list(parts), axis=1)
    assert np.array_equal(back.data, x.data)
    with pytest.raises(ShapeError):
        ops.split(x, [3, 3], axis=1)


def test_cast_round_trip_grad_dtype():
    x = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    y = ops.tsum(ops.cast(x, np.float32))
    y.backward()
    assert x.grad.dtype == np.float64


def test_activation_dispatch():
    x = Tensor([-1.0, 2.0], dtype=np.float64)
    assert np.array_equal(ops.activation(x, "relu").data, [0.0, 2.0])
    with pytest.raises(ShapeError):
        ops.activation(x, "gelu")


def test_space_depth_inverse():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 3, 4, 4, 4)), dtype=np.float64)
    y = ops.depth_to_space_3d(ops.space_to_depth_3d(x, 2), 2)
    assert np.array_equal(y.data, x.data)
    with pytest.raises(ShapeError):
        ops.space_to_depth_3d(x, 3)
    with pytest.raises(ShapeError):
        ops.depth_to_space_3d(x, 2)  # 3 channels not divisible by 8


def test_softmax_cross_entropy_uniform_logits():
    k = 5
    logits = Tensor(np.zeros((2, k, 3, 3, 3)), dtype=np.float64)
    labels = np.random.default_rng(0).integers(0, k, size=(2, 3, 3, 3))
    loss = ops.softmax_cross_entropy(logits, labels)
    assert abs(float(loss.data) - math.log(k)) < 1e-12


def test_softmax_cross_entropy_matches_manual():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((2, 3, 4))
    labels = rng.integers(0, 3, size=(2, 4))
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    want = -np.take_along_axis(logp, labels[:, None], axis=1).mean()
    got = ops.softmax_cross_entropy(Tensor(logits, dtype=np.float64), labels)
    assert abs(float(got.data) - want) < 1e-12


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(7)
    logits = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True,
                    dtype=np.float64)
    labels = rng.integers(0, 4, size=(2, 3))
    err = max_relative_error(
        lambda lg: ops.softmax_cross_entropy(lg, labels), [logits],
        step=1e-6)
    assert err < TOL


def test_softmax_cross_entropy_rejects_bad_labels():
    logits = Tensor(np.zeros((1, 2, 3)), dtype=np.float64)
    with pytest.raises(ShapeError):
        ops.softmax_cross_entropy(logits, np.array([[0, 1, 2]]))
    with pytest.raises(ShapeError):
        ops.softmax_cross_entropy(logits, np.zeros((1, 4), dtype=int))


def test_instance_norm_statistics():
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal((2, 3, 4, 5, 6)) * 7 + 3,
               dtype=np.float64)
    y = instance_norm(x).data
    # per (sample, channel) the output is zero-mean unit-variance
    flat = y.reshape(2, 3, -1)
    assert np.allclose(flat.mean(axis=2), 0.0, atol=1e-12)
    assert np.allclose(flat.var(axis=2), 1.0, atol=1e-6)


def test_rms_norm_scale():
    gain = Parameter(np.full(4, 2.0), dtype=np.float64)
    x = Tensor(np.full((1, 2, 4), 3.0), dtype=np.float64)
    y = rms_norm(x, gain).data
    # constant rows have rms 3, so normalized value 1, times gain 2
    assert np.allclose(y, 2.0, atol=1e-6)
