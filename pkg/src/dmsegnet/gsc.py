"""Gated spatial convolution: a residual block whose 3x3x3 spatial branch
is multiplied by a 1x1x1 channel-gate branch before re-joining the input.

    gate   g1 = relu(IN(conv1x1(z)));  g2 = relu(IN(conv1x1(g1)))
    value  c  = relu(IN(conv3x3(z)));  c  = relu(IN(conv3x3(c)))  [optional 2nd]
    out    z + c * g2

Both branches sit behind ReLU, so the product is elementwise >= 0. With
all conv weights and biases zero the product vanishes and the block is
an exact identity.
"""

import numpy as np

from .core import ops
from .core.module import Module
from .core.tensor import Tensor
from .errors import ShapeError
from .layers import ConvNormAct


class GatedSpatialConv(Module):
    """Shape-preserving gated residual conv block.

    tied_gate_weights reuses the first 1x1x1 conv for the second gate
    step; single_spatial_conv drops the second 3x3x3 conv. Both default
    off.
    """

    def __init__(self, channels: int, tied_gate_weights: bool = False,
                 single_spatial_conv: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if channels < 1:
            raise ShapeError("channels must be >= 1")
        self.channels = channels
        self.gate1 = ConvNormAct(channels, channels, kernel=1, padding=0,
                                 rng=rng, dtype=dtype)
        self.gate2 = (None if tied_gate_weights else
                      ConvNormAct(channels, channels, kernel=1, padding=0,
                                  rng=rng, dtype=dtype))
        self.spatial1 = ConvNormAct(channels, channels, kernel=3, padding=1,
                                    rng=rng, dtype=dtype)
        self.spatial2 = (None if single_spatial_conv else
                         ConvNormAct(channels, channels, kernel=3, padding=1,
                                     rng=rng, dtype=dtype))

    def zero_parameters(self) -> None:
        """Zero every conv weight and bias; norm affines stay (1, 0)."""
        for block in (self.gate1, self.gate2, self.spatial1, self.spatial2):
            if block is None:
                continue
            block.conv.weight.data[:] = 0.0
            if block.conv.bias is not None:
                block.conv.bias.data[:] = 0.0

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 5 or z.shape[1] != self.channels:
            raise ShapeError(
                f"expected [N, {self.channels}, D, H, W], got {z.shape}"
            )
        g = self.gate1(z)
        g = self.gate1(g) if self.gate2 is None else self.gate2(g)
        c = self.spatial1(z)
        if self.spatial2 is not None:
            c = self.spatial2(c)
        return ops.add(z, ops.mul(c, g))
