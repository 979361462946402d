"""Quadri-directional sequence encoder.

Each block flattens its feature volume along four traversal orders, runs
an independent Mamba branch per order, folds each result back onto the
grid, and fuses the four. Stages wrap a gated spatial conv, a run of
such blocks, and a learned stride-2 downsample that doubles channels.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import ops
from .core.module import Module
from .core.tensor import Tensor
from .errors import ShapeError
from .gsc import GatedSpatialConv
from .layers import Conv3d, ConvNormAct
from .scanning import ALL_ORDERS, ScanOrder, VolumeDims, flatten, unflatten
from .ssm import MambaBlock


class QsmBlock(Module):
    """Four directional sequence branches over one volume, fused.

    fusion="sum" adds the four branch volumes in a fixed canonical order;
    fusion="concat_gate" channel-concatenates them and projects back to C
    through a silu-gated pair of 1x1x1 convs. directions may be reduced
    (e.g. forward only) for ablations.
    """

    def __init__(self, channels: int, directions=ALL_ORDERS,
                 fusion: str = "sum", state_dim: int = 16, expand: int = 2,
                 conv_width: int = 4, dt_rank: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if fusion not in ("sum", "concat_gate"):
            raise ValueError(f"unknown fusion mode {fusion!r}")
        if not directions:
            raise ValueError("need at least one scan direction")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.directions = tuple(directions)
        self.fusion = fusion
        self.branches = [
            MambaBlock(channels, state_dim=state_dim, expand=expand,
                       conv_width=conv_width, dt_rank=dt_rank, rng=rng,
                       dtype=dtype)
            for _ in self.directions
        ]
        if fusion == "concat_gate":
            n = len(self.directions)
            self.fuse_value = Conv3d(n * channels, channels, kernel=1,
                                     rng=rng, dtype=dtype)
            self.fuse_gate = Conv3d(n * channels, channels, kernel=1,
                                    rng=rng, dtype=dtype)

    def branch_output(self, z: Tensor, i: int) -> Tensor:
        """One directional branch on its own: flatten, mamba, unflatten."""
        order = self.directions[i]
        dims = VolumeDims(*z.shape[2:])
        return unflatten(self.branches[i](flatten(z, order)), order, dims)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 5 or z.shape[1] != self.channels:
            raise ShapeError(
                f"expected [N, {self.channels}, D, H, W], got {z.shape}"
            )
        outs = [self.branch_output(z, i) for i in range(len(self.directions))]
        if self.fusion == "sum":
            acc = outs[0]
            for o in outs[1:]:
                acc = ops.add(acc, o)
            return acc
        cat = ops.concat(outs, axis=1)
        return ops.mul(self.fuse_value(cat), ops.silu(self.fuse_gate(cat)))


class EncoderStage(Module):
    """gsc -> n sequence blocks -> stride-2 downsample doubling channels.

    Returns (skip, down): skip at the incoming resolution, down at half.
    use_gsc/directions implement the ablation switches.
    """

    def __init__(self, channels: int, num_blocks: int = 1,
                 use_gsc: bool = True, directions=ALL_ORDERS,
                 fusion: str = "sum", state_dim: int = 16, expand: int = 2,
                 conv_width: int = 4, dt_rank: int | None = None,
                 tied_gate_weights: bool = False,
                 single_spatial_conv: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if num_blocks < 1:
            raise ShapeError("num_blocks must be >= 1")
        self.gsc = (GatedSpatialConv(channels,
                                     tied_gate_weights=tied_gate_weights,
                                     single_spatial_conv=single_spatial_conv,
                                     rng=rng, dtype=dtype)
                    if use_gsc else None)
        self.blocks = [
            QsmBlock(channels, directions=directions, fusion=fusion,
                     state_dim=state_dim, expand=expand,
                     conv_width=conv_width, dt_rank=dt_rank, rng=rng,
                     dtype=dtype)
            for _ in range(num_blocks)
        ]
        self.down = ConvNormAct(channels, 2 * channels, kernel=3, stride=2,
                                padding=1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if any(s % 2 for s in x.shape[2:]):
            raise ShapeError(
                f"stage needs even spatial dims to downsample, got "
                f"{tuple(x.shape[2:])}"
            )
        h = x if self.gsc is None else self.gsc(x)
        for blk in self.blocks:
            h = blk(h)
        return h, self.down(h)


@dataclass
class FeaturePyramid:
    """Encoder outputs: full-resolution stem plus one map per stage.

    levels[s] sits at 1/2^(s+1) of the input resolution with
    base_channels * 2^(s+1) channels.  The raw input volume rides along
    so the prediction head can condition directly on voxel intensities.
    """

    stem: Tensor
    image: Tensor
    levels: list[Tensor] = field(default_factory=list)


class Encoder(Module):
    """Stem conv plus a chain of downsampling stages."""

    def __init__(self, in_channels: int = 1, base_channels: int = 24,
                 blocks_per_stage=(1, 1, 1, 1), use_gsc: bool = True,
                 directions=ALL_ORDERS, fusion: str = "sum",
                 state_dim: int = 16, expand: int = 2, conv_width: int = 4,
                 dt_rank: int | None = None, tied_gate_weights: bool = False,
                 single_spatial_conv: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_stages = len(blocks_per_stage)
        self.base_channels = base_channels
        self.stem = ConvNormAct(in_channels, base_channels, kernel=3,
                                stride=1, padding=1, rng=rng, dtype=dtype)
        self.stages = [
            EncoderStage(base_channels * 2 ** s, num_blocks=blocks_per_stage[s],
                         use_gsc=use_gsc, directions=directions,
                         fusion=fusion, state_dim=state_dim, expand=expand,
                         conv_width=conv_width, dt_rank=dt_rank,
                         tied_gate_weights=tied_gate_weights,
                         single_spatial_conv=single_spatial_conv,
                         rng=rng, dtype=dtype)
            for s in range(self.num_stages)
        ]

    def check_input(self, shape) -> None:
        factor = 2 ** self.num_stages
        bad = [s % factor for s in shape[2:]]
        if any(bad):
            need = tuple((factor - s % factor) % factor for s in shape[2:])
            raise ShapeError(
                f"spatial dims {tuple(shape[2:])} must be divisible by "
                f"{factor}; pad by {need} voxels (d, h, w) first"
            )

    def forward(self, volume: Tensor) -> FeaturePyramid:
        if volume.ndim != 5:
            raise ShapeError(f"expected [N,C,D,H,W], got rank {volume.ndim}")
        self.check_input(volume.shape)
        h = self.stem(volume)
        pyramid = FeaturePyramid(stem=h, image=volume)
        for stage in self.stages:
            _, h = stage(h)
            pyramid.levels.append(h)
        return pyramid
