"""Tape-based autodiff engine on numpy arrays."""

from .tensor import Parameter, Tensor, no_grad
from . import ops
from .conv import ConvSpec, causal_conv1d, conv3d, transposed_conv3d
from .gradcheck import directional_relative_error, max_relative_error
from .norm import instance_norm, rms_norm
from .ops import (
    activation,
    add,
    cast,
    concat,
    depth_to_space_3d,
    exp,
    flip,
    linear,
    mul,
    narrow,
    permute,
    relu,
    reshape,
    silu,
    softmax_cross_entropy,
    softplus,
    space_to_depth_3d,
    split,
    tmean,
    tsum,
)

__all__ = [
    "Parameter", "Tensor", "no_grad", "ops",
    "ConvSpec", "causal_conv1d", "conv3d", "transposed_conv3d",
    "directional_relative_error", "max_relative_error",
    "instance_norm", "rms_norm",
    "activation", "add", "cast", "concat", "depth_to_space_3d", "exp",
    "flip", "linear", "mul", "narrow", "permute", "relu", "reshape",
    "silu", "softmax_cross_entropy", "softplus", "space_to_depth_3d",
    "split", "tmean", "tsum",
]
