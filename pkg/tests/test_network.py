"""Encoder pyramid, directional fusion block, and decoder wiring."""

import numpy as np
import pytest

from dmsegnet.core import no_grad, ops
from dmsegnet.core.tensor import Tensor
from dmsegnet.decoder import Decoder, DmSegNet
from dmsegnet.encoder import Encoder, EncoderStage, QsmBlock
from dmsegnet.errors import ShapeError
from dmsegnet.scanning import ALL_ORDERS, ScanOrder


def tiny_net(**kw):
    args = dict(in_channels=1, num_classes=2, base_channels=8,
                decoder_channels=16, blocks_per_stage=(1, 1, 1, 1),
                state_dim=16, seed=0)
    args.update(kw)
    return DmSegNet(**args)


def n_params(m):
    return sum(p.data.size for p in m.parameters())


# ---------------------------------------------------------------- QsmBlock

def test_fused_sum_equals_branch_sum():
    rng = np.random.default_rng(0)
    blk = QsmBlock(4, rng=rng, dtype=np.float64)
    z = Tensor(rng.standard_normal((2, 4, 3, 4, 5)))
    with no_grad():
        fused = blk(z).data
        acc = blk.branch_output(z, 0).data
        for i in range(1, 4):
            acc = acc + blk.branch_output(z, i).data
    assert np.array_equal(fused, acc)


def test_branches_are_independent_modules():
    blk = QsmBlock(4, rng=np.random.default_rng(1))
    assert len(blk.branches) == 4
    w0 = blk.branches[0].in_proj.data
    w1 = blk.branches[1].in_proj.data
    assert not np.array_equal(w0, w1)


def test_single_direction_subset():
    rng = np.random.default_rng(2)
    blk = QsmBlock(4, directions=(ScanOrder.FORWARD,), rng=rng,
                   dtype=np.float64)
    z = Tensor(rng.standard_normal((1, 4, 2, 2, 2)))
    with no_grad():
        assert np.array_equal(blk(z).data, blk.branch_output(z, 0).data)


def test_concat_gate_fusion():
    rng = np.random.default_rng(3)
    blk = QsmBlock(4, fusion="concat_gate", rng=rng, dtype=np.float64)
    z = Tensor(rng.standard_normal((1, 4, 2, 4, 2)))
    with no_grad():
        out = blk(z)
    assert out.shape == z.shape
    assert n_params(blk) > n_params(QsmBlock(4, rng=np.random.default_rng(3),
                                             dtype=np.float64))


def test_qsm_block_rejects_bad_input():
    blk = QsmBlock(4, rng=np.random.default_rng(4))
    with pytest.raises(ShapeError):
        blk(Tensor(np.zeros((1, 3, 2, 2, 2), dtype=np.float32)))
    with pytest.raises(ValueError):
        QsmBlock(4, fusion="mean")
    with pytest.raises(ValueError):
        QsmBlock(4, directions=())


# ------------------------------------------------------------------ stages

def test_stage_returns_skip_and_downsample():
    rng = np.random.default_rng(5)
    stage = EncoderStage(8, rng=rng)
    x = Tensor(rng.standard_normal((1, 8, 4, 6, 4)).astype(np.float32))
    skip, down = stage(x)
    assert skip.shape == (1, 8, 4, 6, 4)
    assert down.shape == (1, 16, 2, 3, 2)


def test_stage_requires_even_dims():
    stage = EncoderStage(8, rng=np.random.default_rng(6))
    with pytest.raises(ShapeError):
        stage(Tensor(np.zeros((1, 8, 3, 4, 4), dtype=np.float32)))


def test_stage_ablation_drops_gsc():
    bare = EncoderStage(8, use_gsc=False, rng=np.random.default_rng(7))
    assert bare.gsc is None


# ----------------------------------------------------------------- encoder

def test_pyramid_shapes_and_channels():
    rng = np.random.default_rng(8)
    enc = Encoder(in_channels=1, base_channels=8, rng=rng)
    x = Tensor(rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
    with no_grad():
        pyr = enc(x)
    assert pyr.stem.shape == (1, 8, 16, 16, 16)
    assert pyr.image is x
    sizes = [lvl.shape for lvl in pyr.levels]
    assert sizes == [(1, 16, 8, 8, 8), (1, 32, 4, 4, 4),
                     (1, 64, 2, 2, 2), (1, 128, 1, 1, 1)]


def test_encoder_divisibility_message_hints_padding():
    enc = Encoder(base_channels=8, rng=np.random.default_rng(9))
    with pytest.raises(ShapeError, match="pad by"):
        enc(Tensor(np.zeros((1, 1, 20, 16, 16), dtype=np.float32)))
    with pytest.raises(ShapeError):
        enc(Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32)))


# ----------------------------------------------------------------- decoder

def test_zero_init_classifier_gives_uniform_scores():
    net = tiny_net(num_classes=3)
    x = Tensor(np.random.default_rng(10).standard_normal(
        (1, 1, 16, 16, 16)).astype(np.float32))
    with no_grad():
        logits = net(x)
    assert logits.shape == (1, 3, 16, 16, 16)
    assert np.all(logits.data == 0.0)


def test_decoder_intermediate_maps():
    net = tiny_net()
    x = Tensor(np.random.default_rng(11).standard_normal(
        (1, 1, 16, 16, 16)).astype(np.float32))
    with no_grad():
        logits, rec = net(x, return_intermediates=True)
    assert logits.shape == (1, 2, 16, 16, 16)
    assert set(rec) == {"f2", "f3", "f4", "f_u", "f_d", "f_u1", "f_u2", "f_f"}
    # decoder working maps: fine grid at 1/2, context map back at 1/2
    assert rec["f2"].shape == (1, 16, 8, 8, 8)
    assert rec["f3"].shape == (1, 16, 4, 4, 4)
    assert rec["f4"].shape == (1, 16, 2, 2, 2)
    assert rec["f_u"].shape == (1, 16, 8, 8, 8)
    assert rec["f_d"].shape == (1, 16, 2, 2, 2)
    assert rec["f_f"].shape == (1, 16, 8, 8, 8)


def test_context_injection_toggle_changes_output():
    rng = np.random.default_rng(12)
    net = tiny_net(seed=5)
    # classifier is zero-init, so give it nonzero weights to see the effect
    net.decoder.classifier.weight.data[:] = rng.standard_normal(
        net.decoder.classifier.weight.shape).astype(np.float32)
    x = Tensor(rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
    with no_grad():
        pyr = net.encoder(x)
        on = net.decoder(pyr).data
        off = net.decoder(pyr, disable_context_injection=True).data
    assert on.shape == off.shape
    assert not np.array_equal(on, off)


def test_decoder_requires_exact_level_doubling():
    net = tiny_net()
    x = Tensor(np.random.default_rng(13).standard_normal(
        (1, 1, 16, 16, 16)).astype(np.float32))
    with no_grad():
        pyr = net.encoder(x)
        pyr.levels[3] = pyr.levels[2]  # breaks the 2x relation vs E3
        with pytest.raises(ShapeError):
            net.decoder(pyr)


# ------------------------------------------------------ ablation topologies

def build_topology(qss: bool, gsc: bool):
    return tiny_net(directions=ALL_ORDERS if qss else (ScanOrder.FORWARD,),
                    use_gsc=gsc)


def test_ablation_parameter_counts():
    counts = {
        (False, False): n_params(build_topology(False, False)),
        (True, False): n_params(build_topology(True, False)),
        (False, True): n_params(build_topology(False, True)),
        (True, True): n_params(build_topology(True, True)),
    }
    # adding either module strictly grows the model; full is largest
    assert counts[(True, False)] > counts[(False, False)]
    assert counts[(False, True)] > counts[(False, False)]
    assert counts[(True, True)] > counts[(True, False)]
    assert counts[(True, True)] > counts[(False, True)]
    assert counts == PINNED_PARAM_COUNTS


PINNED_PARAM_COUNTS = {
    (False, False): 536484,
    (True, False): 688620,
    (False, True): 842084,
    (True, True): 994220,
}


def test_all_topologies_forward():
    x = Tensor(np.random.default_rng(14).standard_normal(
        (1, 1, 16, 16, 16)).astype(np.float32))
    for qss in (False, True):
        for gsc in (False, True):
            net = build_topology(qss, gsc)
            with no_grad():
                out = net(x)
            assert out.shape == (1, 2, 16, 16, 16)


def test_forward_batch_of_two():
    net = tiny_net()
    x = Tensor(np.random.default_rng(15).standard_normal(
        (2, 1, 16, 16, 16)).astype(np.float32))
    with no_grad():
        out = net(x)
    assert out.shape == (2, 2, 16, 16, 16)


def test_multichannel_input():
    net = tiny_net(in_channels=4)
    x = Tensor(np.random.default_rng(16).standard_normal(
        (1, 4, 16, 16, 16)).astype(np.float32))
    with no_grad():
        out = net(x)
    assert out.shape == (1, 2, 16, 16, 16)
