"""Overlap and boundary metrics against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from dmsegnet.errors import ShapeError
from dmsegnet.metrics import (CSV_HEADER, ClassMetrics, MetricReport, dice,
                              evaluate, hd95, nearest_rank_95,
                              write_report_csv)


def brute_dice(pred, gt, cls):
    inter = p_n = g_n = 0
    for pv, gv in zip(pred.ravel(), gt.ravel()):
        p_hit, g_hit = pv == cls, gv == cls
        p_n += p_hit
        g_n += g_hit
        inter += p_hit and g_hit
    if p_n + g_n == 0:
        return 1.0
    return 2.0 * inter / (p_n + g_n)


def brute_hd95(pred, gt, cls, spacing=(1.0, 1.0, 1.0)):
    sp = np.asarray(spacing, dtype=np.float64)
    p_pts = np.argwhere(pred == cls) * sp
    g_pts = np.argwhere(gt == cls) * sp
    if len(p_pts) == 0 and len(g_pts) == 0:
        return 0.0
    if len(p_pts) == 0 or len(g_pts) == 0:
        return None
    all_d = cdist(p_pts, g_pts)
    pool = np.concatenate([all_d.min(axis=1), all_d.min(axis=0)])
    pool = np.sort(pool)
    return float(pool[min((95 * pool.size) // 100, pool.size - 1)])


def random_pair(rng, size=6, classes=3):
    shape = (size,) * 3
    return (rng.integers(0, classes, size=shape),
            rng.integers(0, classes, size=shape))


def test_dice_matches_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        p, g = random_pair(rng)
        for cls in (0, 1, 2):
            assert dice(p, g, cls) == brute_dice(p, g, cls)


def test_hd95_matches_exhaustive_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(40):
        p, g = random_pair(rng)
        spacing = tuple(rng.uniform(0.5, 3.0, size=3))
        for cls in (1, 2):
            got = hd95(p, g, cls, spacing)
            want = brute_hd95(p, g, cls, spacing)
            if want is None:
                assert got is None
            else:
                worst = max(worst, abs(got - want))
    assert worst < 1e-9, f"max deviation {worst:.3e}"


def test_hd95_is_symmetric():
    rng = np.random.default_rng(2)
    for _ in range(10):
        p, g = random_pair(rng)
        assert hd95(p, g, 1) == hd95(g, p, 1)


def test_nearest_rank_enumerations():
    # pools of <= 20 distances return the maximum outright
    assert nearest_rank_95(np.arange(20, dtype=float)) == 19.0
    assert nearest_rank_95(np.array([7.0])) == 7.0
    # 21 entries: floor(0.95 * 21) = 19 -> second largest
    assert nearest_rank_95(np.arange(21, dtype=float)) == 19.0
    # 100 entries: index 95 of 0..99
    assert nearest_rank_95(np.arange(100, dtype=float)) == 95.0
    with pytest.raises(ValueError):
        nearest_rank_95(np.array([]))


def test_hand_distances():
    a = np.zeros((5, 5, 5), dtype=np.int64)
    b = np.zeros((5, 5, 5), dtype=np.int64)
    a[0, 0, 0] = 1
    b[0, 0, 3] = 1
    assert hd95(a, b, 1) == 3.0
    # anisotropic spacing stretches the last axis
    assert hd95(a, b, 1, spacing=(1.0, 1.0, 2.5)) == 7.5
    assert dice(a, b, 1) == 0.0
    assert dice(a, a, 1) == 1.0


def test_empty_mask_conventions():
    z = np.zeros((4, 4, 4), dtype=np.int64)
    one = z.copy()
    one[1, 1, 1] = 1
    assert dice(z, z, 1) == 1.0
    assert hd95(z, z, 1) == 0.0
    assert hd95(one, z, 1) is None
    assert hd95(z, one, 1) is None
    assert dice(one, z, 1) == 0.0


def test_input_validation():
    p = np.zeros((4, 4, 4), dtype=np.int64)
    with pytest.raises(ShapeError):
        dice(p, np.zeros((4, 4, 5), dtype=np.int64), 1)
    with pytest.raises(ShapeError):
        dice(p.astype(np.float32), p, 1)
    with pytest.raises(ShapeError):
        dice(np.zeros((4, 4), dtype=np.int64),
             np.zeros((4, 4), dtype=np.int64), 1)
    with pytest.raises(ShapeError):
        hd95(np.zeros((2, 4, 4, 4), dtype=np.int64),
             np.zeros((2, 4, 4, 4), dtype=np.int64), 1)
    with pytest.raises(ValueError):
        hd95(p, p, 1, spacing=(1.0, 1.0))
    with pytest.raises(ValueError):
        hd95(p, p, 1, spacing=(1.0, -1.0, 1.0))
    with pytest.raises(ValueError):
        evaluate(p, p, num_classes=1)


def test_evaluate_per_class_and_means():
    gt = np.zeros((6, 6, 6), dtype=np.int64)
    gt[0:2, 0:2, 0:2] = 1
    gt[4:6, 4:6, 4:6] = 2
    pred = gt.copy()
    pred[0, 0, 0] = 0  # clip one voxel of class 1
    rep = evaluate(pred, gt, num_classes=3)
    assert rep.per_class[1].dice == pytest.approx(2 * 7 / (7 + 8))
    assert rep.per_class[2].dice == 1.0
    assert rep.per_class[2].hd95 == 0.0
    assert rep.mean_dice == pytest.approx((rep.per_class[1].dice + 1.0) / 2)


def test_evaluate_skips_undefined_hd95():
    gt = np.zeros((4, 4, 4), dtype=np.int64)
    gt[0, 0, 0] = 1
    pred = np.zeros_like(gt)  # class 1 missing, class 2 absent everywhere
    rep = evaluate(pred, gt, num_classes=3)
    assert rep.per_class[1].hd95 is None
    assert rep.per_class[2].hd95 == 0.0
    assert rep.mean_hd95 == 0.0

    rep2 = evaluate(pred, gt, num_classes=2)
    assert rep2.mean_hd95 is None
    assert rep2.mean_dice == 0.0


def test_report_csv_golden(tmp_path):
    rep = MetricReport(
        per_class={1: ClassMetrics(dice=0.5, hd95=1.25),
                   2: ClassMetrics(dice=1.0, hd95=None)},
        mean_dice=0.75, mean_hd95=1.25,
    )
    out = tmp_path / "report.csv"
    write_report_csv(out, [("case_a", rep)])
    text = out.read_text()
    assert text.splitlines() == [
        "case,class,dice,hd95",
        "case_a,1,0.5,1.25",
        "case_a,2,1.0,undefined",
    ]
    assert ",".join(CSV_HEADER) == "case,class,dice,hd95"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_dice_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    p, g = random_pair(rng, size=4)
    d = dice(p, g, 1)
    assert 0.0 <= d <= 1.0
    assert d == dice(g, p, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_hd95_nonnegative_and_zero_on_match(seed):
    rng = np.random.default_rng(seed)
    p, g = random_pair(rng, size=4)
    h = hd95(p, g, 1)
    if h is not None:
        assert h >= 0.0
    assert hd95(p, p, 1) == 0.0
