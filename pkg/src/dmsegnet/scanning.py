"""Bijective 3-d to 1-d traversal orders and their tensor-level forms.

Four orders relate voxel coordinates (d, h, w) of a [N, C, D, H, W]
feature volume to positions in a length D*H*W sequence:

  forward:            l = d*H*W + h*W + w   (slice-major, row-major)
  reverse:            l -> L-1-l of forward
  interslice:         l = (h*W + w)*D + d   (depth varies fastest)
  reverse_interslice: l -> L-1-l of interslice

flatten/unflatten are pure recorded permutations, so gradients flow back
through the exact inverse permutation.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Tensor, ops
from .errors import ShapeError


class ScanOrder(Enum):
    FORWARD = "forward"
    REVERSE = "reverse"
    INTERSLICE = "interslice"
    REVERSE_INTERSLICE = "reverse_interslice"

    @property
    def reversed_variant(self) -> bool:
        return self in (ScanOrder.REVERSE, ScanOrder.REVERSE_INTERSLICE)

    @property
    def base(self) -> "ScanOrder":
        """The unreversed order this one traverses (possibly itself)."""
        if self is ScanOrder.REVERSE:
            return ScanOrder.FORWARD
        if self is ScanOrder.REVERSE_INTERSLICE:
            return ScanOrder.INTERSLICE
        return self


ALL_ORDERS = (
    ScanOrder.FORWARD,
    ScanOrder.REVERSE,
    ScanOrder.INTERSLICE,
    ScanOrder.REVERSE_INTERSLICE,
)


@dataclass(frozen=True)
class VolumeDims:
    d: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.d, self.h, self.w) < 1:
            raise ShapeError(f"dims must be positive, got {self}")

    @property
    def length(self) -> int:
        return self.d * self.h * self.w


def linear_index(order: ScanOrder, pos: tuple[int, int, int],
                 dims: VolumeDims) -> int:
    """Sequence position of voxel pos under the given order."""
    d, h, w = pos
    if not (0 <= d < dims.d and 0 <= h < dims.h and 0 <= w < dims.w):
        raise IndexError(f"position {pos} out of range for {dims}")
    if order.base is ScanOrder.FORWARD:
        l = d * dims.h * dims.w + h * dims.w + w
    else:
        l = (h * dims.w + w) * dims.d + d
    if order.reversed_variant:
        l = dims.length - 1 - l
    return l


def coordinate_of(order: ScanOrder, l: int, dims: VolumeDims
                  ) -> tuple[int, int, int]:
    """Voxel coordinate occupying sequence position l; inverse of
    linear_index."""
    if not 0 <= l < dims.length:
        raise IndexError(f"sequence position {l} out of range 0..{dims.length - 1}")
    if order.reversed_variant:
        l = dims.length - 1 - l
    if order.base is ScanOrder.FORWARD:
        d, rem = divmod(l, dims.h * dims.w)
        h, w = divmod(rem, dims.w)
    else:
        hw, d = divmod(l, dims.d)
        h, w = divmod(hw, dims.w)
    return d, h, w


def index_map(order: ScanOrder, dims: VolumeDims) -> np.ndarray:
    """Array [D, H, W] of sequence positions, vectorized linear_index."""
    d = np.arange(dims.d)[:, None, None]
    h = np.arange(dims.h)[None, :, None]
    w = np.arange(dims.w)[None, None, :]
    if order.base is ScanOrder.FORWARD:
        m = d * (dims.h * dims.w) + h * dims.w + w
    else:
        m = (h * dims.w + w) * dims.d + d
    if order.reversed_variant:
        m = dims.length - 1 - m
    return m


def flatten(z: Tensor, order: ScanOrder) -> Tensor:
    """[N, C, D, H, W] -> [N, L, C] with positions given by linear_index."""
    if z.ndim != 5:
        raise ShapeError(f"expected rank-5 volume, got rank {z.ndim}")
    n, c, d, h, w = z.shape
    if order.base is ScanOrder.FORWARD:
        seq = ops.permute(z, (0, 2, 3, 4, 1))
    else:
        seq = ops.permute(z, (0, 3, 4, 2, 1))
    seq = ops.reshape(seq, (n, d * h * w, c))
    if order.reversed_variant:
        seq = ops.flip(seq, (1,))
    return seq


def unflatten(seq: Tensor, order: ScanOrder, dims: VolumeDims) -> Tensor:
    """Exact inverse of flatten with the same order."""
    if seq.ndim != 3:
        raise ShapeError(f"expected rank-3 sequence, got rank {seq.ndim}")
    n, length, c = seq.shape
    if length != dims.length:
        raise ShapeError(
            f"sequence length {length} does not match {dims} "
            f"(expected {dims.length})"
        )
    if order.reversed_variant:
        seq = ops.flip(seq, (1,))
    if order.base is ScanOrder.FORWARD:
        vol = ops.reshape(seq, (n, dims.d, dims.h, dims.w, c))
        return ops.permute(vol, (0, 4, 1, 2, 3))
    vol = ops.reshape(seq, (n, dims.h, dims.w, dims.d, c))
    return ops.permute(vol, (0, 4, 3, 1, 2))
