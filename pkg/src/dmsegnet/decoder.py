"""Multi-scale fusion decoder and the full segmentation network.

The decoder projects three pyramid levels to a common width, resamples
them onto a fine (1/2) and a coarse (1/8) grid, fuses each group, runs
the fused pair through a sequence-block stage, and injects the resulting
context map back into every scale before predicting voxel logits at full
resolution. All resampling is either learned (transposed conv) or a
lossless block rearrangement; no interpolation anywhere.
"""

import numpy as np

from .core import ops
from .core.module import Module
from .core.tensor import Tensor
from .encoder import Encoder, FeaturePyramid
from .errors import ShapeError
from .layers import Conv3d, ConvNormAct, InstanceNorm, TransposedConv3d
from .scanning import ALL_ORDERS
from .encoder import QsmBlock


class Decoder(Module):
    """Fuse pyramid levels into voxel logits.

    Consumes a pyramid with levels E1..E4 (1/2 .. 1/16) plus the stem.
    Internally: F2/F3/F4 are C_d-wide maps at 1/2, 1/4, 1/8; F_u and F_d
    are the fine and coarse fusions; F_f is the context map injected back
    into each scale.
    """

    def __init__(self, base_channels: int, decoder_channels: int = 48,
                 num_classes: int = 2, in_channels: int = 1,
                 directions=ALL_ORDERS,
                 fusion: str = "sum", state_dim: int = 16, expand: int = 2,
                 conv_width: int = 4, dt_rank: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        c0, cd = base_channels, decoder_channels
        self.num_classes = num_classes
        self.decoder_channels = cd

        self.proj2 = ConvNormAct(2 * c0, cd, kernel=1, padding=0, rng=rng,
                                 dtype=dtype)
        self.proj3 = ConvNormAct(4 * c0, cd, kernel=1, padding=0, rng=rng,
                                 dtype=dtype)
        self.f4_up = TransposedConv3d(16 * c0, 8 * c0, kernel=2, stride=2,
                                      rng=rng, dtype=dtype)
        self.f4_fuse = ConvNormAct(16 * c0, cd, kernel=1, padding=0, rng=rng,
                                   dtype=dtype)

        # fine-grid group: project, then expand channels and rearrange up
        self.up_proj2 = Conv3d(cd, cd, kernel=1, rng=rng, dtype=dtype)
        self.up_proj3 = Conv3d(cd, 8 * cd, kernel=1, rng=rng, dtype=dtype)
        self.up_proj4 = Conv3d(cd, 64 * cd, kernel=1, rng=rng, dtype=dtype)
        self.fu_norm = InstanceNorm(3 * cd, dtype=dtype)
        self.fu_conv = Conv3d(3 * cd, cd, kernel=1, rng=rng, dtype=dtype)

        # coarse-grid group: rearrange down, then reduce channels
        self.down_proj2 = Conv3d(64 * cd, cd, kernel=1, rng=rng, dtype=dtype)
        self.down_proj3 = Conv3d(8 * cd, cd, kernel=1, rng=rng, dtype=dtype)
        self.down_proj4 = Conv3d(cd, cd, kernel=1, rng=rng, dtype=dtype)
        self.fd_norm = InstanceNorm(3 * cd, dtype=dtype)
        self.fd_conv = Conv3d(3 * cd, cd, kernel=1, rng=rng, dtype=dtype)

        # fusion stage: two paths carry F_u down to the coarse grid
        self.u1_conv_a = Conv3d(cd, cd, kernel=3, stride=2, padding=1,
                                rng=rng, dtype=dtype)
        self.u1_conv_b = Conv3d(cd, cd, kernel=3, stride=2, padding=1,
                                rng=rng, dtype=dtype)
        self.u2_conv = Conv3d(cd, cd, kernel=3, stride=2, padding=1,
                              rng=rng, dtype=dtype)
        self.u2_proj = Conv3d(8 * cd, cd, kernel=1, rng=rng, dtype=dtype)
        self.mix_conv = Conv3d(3 * cd, cd, kernel=1, rng=rng, dtype=dtype)
        self.mix_qsm = QsmBlock(cd, directions=directions, fusion=fusion,
                                state_dim=state_dim, expand=expand,
                                conv_width=conv_width, dt_rank=dt_rank,
                                rng=rng, dtype=dtype)
        self.ctx_up_a = TransposedConv3d(cd, cd, kernel=2, stride=2, rng=rng,
                                         dtype=dtype)
        self.ctx_up_b = TransposedConv3d(cd, cd, kernel=2, stride=2, rng=rng,
                                         dtype=dtype)

        # residual context injection, one bias-free conv per scale
        self.inject2 = Conv3d(cd, cd, kernel=1, bias=False, rng=rng,
                              dtype=dtype)
        self.inject3 = Conv3d(8 * cd, cd, kernel=1, bias=False, rng=rng,
                              dtype=dtype)
        self.inject4 = Conv3d(64 * cd, cd, kernel=1, bias=False, rng=rng,
                              dtype=dtype)

        # prediction path back to full resolution
        self.pred_up3 = TransposedConv3d(cd, cd, kernel=2, stride=2, rng=rng,
                                         dtype=dtype)
        self.pred_up4_a = TransposedConv3d(cd, cd, kernel=2, stride=2,
                                           rng=rng, dtype=dtype)
        self.pred_up4_b = TransposedConv3d(cd, cd, kernel=2, stride=2,
                                           rng=rng, dtype=dtype)
        self.pred_fuse = ConvNormAct(4 * cd, cd, kernel=3, padding=1, rng=rng,
                                     dtype=dtype)
        self.pred_up_full = TransposedConv3d(cd, cd, kernel=2, stride=2,
                                             rng=rng, dtype=dtype)
        # zero-init classifier: freshly built nets emit uniform class scores.
        # Sees the raw input next to stem and head features so per-voxel
        # intensity evidence reaches the logits without passing a relu.
        self.classifier = Conv3d(cd + c0 + in_channels, num_classes, kernel=1,
                                 rng=rng, dtype=dtype, zero_init=True)

    def build_f4(self, e3: Tensor, e4: Tensor) -> Tensor:
        """Lift the deepest level onto the 1/8 grid and fuse with E3."""
        for i in range(3):
            if e3.shape[2 + i] != 2 * e4.shape[2 + i]:
                raise ShapeError(
                    f"E3 {tuple(e3.shape[2:])} must be exactly twice E4 "
                    f"{tuple(e4.shape[2:])}"
                )
        up = self.f4_up(e4)
        return self.f4_fuse(ops.concat([up, e3], axis=1))

    def _fine_coarse(self, f2: Tensor, f3: Tensor, f4: Tensor
                     ) -> tuple[Tensor, Tensor]:
        """Resample all three maps to the 1/2 and 1/8 grids and fuse."""
        up2 = self.up_proj2(f2)
        up3 = ops.depth_to_space_3d(self.up_proj3(f3), 2)
        up4 = ops.depth_to_space_3d(self.up_proj4(f4), 4)
        fu = self.fu_conv(self.fu_norm(ops.relu(
            ops.concat([up2, up3, up4], axis=1))))
        down2 = self.down_proj2(ops.space_to_depth_3d(f2, 4))
        down3 = self.down_proj3(ops.space_to_depth_3d(f3, 2))
        down4 = self.down_proj4(f4)
        fd = self.fd_conv(self.fd_norm(ops.relu(
            ops.concat([down2, down3, down4], axis=1))))
        return fu, fd

    def _context_map(self, fu: Tensor, fd: Tensor, record: dict) -> Tensor:
        """Fuse fine and coarse maps through the sequence stage; output
        returns to the fine grid."""
        fu1 = self.u1_conv_b(self.u1_conv_a(fu))
        fu2 = self.u2_proj(ops.space_to_depth_3d(self.u2_conv(fu), 2))
        record["f_u1"], record["f_u2"] = fu1, fu2
        mixed = self.mix_conv(ops.concat([fd, fu1, fu2], axis=1))
        mixed = self.mix_qsm(mixed)
        return self.ctx_up_b(self.ctx_up_a(mixed))

    def forward(self, pyramid: FeaturePyramid, return_intermediates=False,
                disable_context_injection=False):
        if len(pyramid.levels) != 4:
            raise ShapeError(
                f"decoder expects a 4-level pyramid, got "
                f"{len(pyramid.levels)}"
            )
        e1, e2, e3, e4 = pyramid.levels
        f2 = self.proj2(e1)
        f3 = self.proj3(e2)
        f4 = self.build_f4(e3, e4)
        rec = {"f2": f2, "f3": f3, "f4": f4}
        fu, fd = self._fine_coarse(f2, f3, f4)
        rec["f_u"], rec["f_d"] = fu, fd
        ff = self._context_map(fu, fd, rec)
        rec["f_f"] = ff

        if disable_context_injection:
            f2p, f3p, f4p = f2, f3, f4
        else:
            f2p = ops.add(f2, self.inject2(ff))
            f3p = ops.add(f3, self.inject3(ops.space_to_depth_3d(ff, 2)))
            f4p = ops.add(f4, self.inject4(ops.space_to_depth_3d(ff, 4)))

        up3 = self.pred_up3(f3p)
        up4 = self.pred_up4_b(self.pred_up4_a(f4p))
        head = self.pred_fuse(ops.concat([f2p, up3, up4, ff], axis=1))
        head = self.pred_up_full(head)
        logits = self.classifier(
            ops.concat([head, pyramid.stem, pyramid.image], axis=1))
        if return_intermediates:
            return logits, rec
        return logits


class DmSegNet(Module):
    """Full network: quadri-directional encoder plus fusion decoder."""

    def __init__(self, in_channels: int = 1, num_classes: int = 2,
                 base_channels: int = 24, decoder_channels: int = 48,
                 blocks_per_stage=(1, 1, 1, 1), use_gsc: bool = True,
                 directions=ALL_ORDERS, fusion: str = "sum",
                 state_dim: int = 16, expand: int = 2, conv_width: int = 4,
                 dt_rank: int | None = None, tied_gate_weights: bool = False,
                 single_spatial_conv: bool = False, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(in_channels=in_channels,
                               base_channels=base_channels,
                               blocks_per_stage=blocks_per_stage,
                               use_gsc=use_gsc, directions=directions,
                               fusion=fusion, state_dim=state_dim,
                               expand=expand, conv_width=conv_width,
                               dt_rank=dt_rank,
                               tied_gate_weights=tied_gate_weights,
                               single_spatial_conv=single_spatial_conv,
                               rng=rng, dtype=dtype)
        self.decoder = Decoder(base_channels=base_channels,
                               decoder_channels=decoder_channels,
                               num_classes=num_classes,
                               in_channels=in_channels,
                               directions=directions, fusion=fusion,
                               state_dim=state_dim, expand=expand,
                               conv_width=conv_width, dt_rank=dt_rank,
                               rng=rng, dtype=dtype)

    def forward(self, volume: Tensor, return_intermediates=False):
        pyramid = self.encoder(volume)
        return self.decoder(pyramid, return_intermediates=return_intermediates)
