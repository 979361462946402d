"""Parameterized layer wrappers over the raw tensor ops."""

import numpy as np

from .core import ConvSpec, conv3d, instance_norm, ops, transposed_conv3d
from .core.module import Module
from .core.tensor import Parameter, Tensor


def conv_init(rng: np.random.Generator, out_c: int, in_c_per_group: int,
              kernel, dtype, bias: bool = True):
    """Uniform fan-in init for conv weight and bias."""
    k3 = int(np.prod(kernel))
    fan_in = in_c_per_group * k3
    bound = fan_in ** -0.5
    w = rng.uniform(-bound, bound,
                    size=(out_c, in_c_per_group, *kernel)).astype(dtype)
    b = rng.uniform(-bound, bound, size=out_c).astype(dtype) if bias else None
    return w, b


class Conv3d(Module):
    """Bare 3-d convolution layer."""

    def __init__(self, in_c: int, out_c: int, kernel=1, stride=1, padding=0,
                 groups: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 zero_init: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = ConvSpec(kernel=kernel, stride=stride, padding=padding,
                             groups=groups)
        w, b = conv_init(rng, out_c, in_c // groups, self.spec.kernel, dtype,
                         bias)
        if zero_init:
            w[:] = 0.0
            if b is not None:
                b[:] = 0.0
        self.weight = Parameter(w)
        self.bias = Parameter(b) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.spec)


class TransposedConv3d(Module):
    """Bare transposed 3-d convolution layer; weight is [in_c, out_c, k...]."""

    def __init__(self, in_c: int, out_c: int, kernel=2, stride=2, padding=0,
                 groups: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = ConvSpec(kernel=kernel, stride=stride, padding=padding,
                             groups=groups)
        w, b = conv_init(rng, in_c, out_c // groups, self.spec.kernel, dtype,
                         bias=False)
        # stored transposed relative to conv3d: input channels lead
        self.weight = Parameter(np.ascontiguousarray(w))
        if bias:
            bound = (in_c // groups * int(np.prod(self.spec.kernel))) ** -0.5
            self.bias = Parameter(
                rng.uniform(-bound, bound, size=out_c).astype(dtype))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return transposed_conv3d(x, self.weight, self.bias, self.spec)


class InstanceNorm(Module):
    """Instance norm with learnable per-channel affine."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.scale = Parameter(np.ones(channels, dtype=dtype))
        self.shift = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return instance_norm(x, self.scale, self.shift, eps=self.eps)


class ConvNormAct(Module):
    """conv -> instance norm -> relu, the default block everywhere."""

    def __init__(self, in_c: int, out_c: int, kernel=3, stride=1, padding=1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        # no conv bias: the norm's mean subtraction would cancel it exactly
        self.conv = Conv3d(in_c, out_c, kernel=kernel, stride=stride,
                           padding=padding, bias=False, rng=rng, dtype=dtype)
        self.norm = InstanceNorm(out_c, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.norm(self.conv(x)))
