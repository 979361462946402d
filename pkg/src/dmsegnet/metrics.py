"""Overlap and boundary-distance metrics for label volumes.

Two quantities: the Dice coefficient (volumetric overlap) and the 95th
percentile Hausdorff distance (boundary agreement in physical units).
Conventions are pinned here because the literature leaves them loose:

- hd95 works on the full voxel point sets of each class, not on
  extracted surfaces (deterministic and cheap to oracle-check; a
  surface mode may be added later but is deliberately absent now).
- The percentile is nearest-rank on the pooled multiset of both
  directed distance sets, so hd95(P, G) == hd95(G, P) exactly and any
  pool of at most 20 distances returns the maximum.
- Empty masks: both empty -> dice 1.0 and hd95 0.0; exactly one empty
  -> hd95 is undefined (returned as None, excluded from means).
"""

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ShapeError

CSV_HEADER = ("case", "class", "dice", "hd95")
UNDEFINED = "undefined"


def _as_labels(vol) -> np.ndarray:
    arr = np.asarray(vol)
    if arr.ndim not in (3, 4):
        raise ShapeError(f"label volume must be [D,H,W] or [N,D,H,W], got "
                         f"rank {arr.ndim}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ShapeError(f"label volume must be integer, got {arr.dtype}")
    return arr


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_labels(pred), _as_labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"pred shape {p.shape} != gt shape {g.shape}")
    return p, g


def _check_spacing(spacing) -> np.ndarray:
    sp = np.asarray(spacing, dtype=np.float64)
    if sp.shape != (3,):
        raise ValueError(f"spacing must be (sd, sh, sw), got {spacing!r}")
    if not np.all(sp > 0):
        raise ValueError(f"spacing must be positive, got {spacing!r}")
    return sp


def dice(pred, gt, cls: int) -> float:
    """2|P^G| / (|P|+|G|) over the class-``cls`` masks; both empty -> 1.0."""
    p, g = _check_pair(pred, gt)
    pm, gm = p == cls, g == cls
    denom = int(pm.sum()) + int(gm.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pm, gm).sum()) / denom


def _directed_min_distances(src: np.ndarray, dst_tree) -> np.ndarray:
    d, _ = dst_tree.query(src, k=1)
    return np.atleast_1d(d)


def nearest_rank_95(distances: np.ndarray) -> float:
    """Nearest-rank 95th percentile: sorted[min(floor(0.95 n), n-1)]."""
    n = distances.size
    if n == 0:
        raise ValueError("percentile of an empty pool")
    idx = min((95 * n) // 100, n - 1)
    return float(np.sort(distances)[idx])


def hd95(pred, gt, cls: int, spacing=(1.0, 1.0, 1.0)) -> Optional[float]:
    """95th-percentile symmetric point-set distance in physical units.

    Pools the directed distance multisets {d(p, G): p in P} and
    {d(g, P): g in G} under the spacing-scaled Euclidean metric and
    takes the nearest-rank 95th percentile of the pool. Both masks
    empty -> 0.0; exactly one empty -> None (undefined).
    """
    p, g = _check_pair(pred, gt)
    sp = _check_spacing(spacing)
    if p.ndim == 4:
        if p.shape[0] != 1:
            raise ShapeError("hd95 is a per-case quantity; pass one case "
                             "at a time (got batch of "
                             f"{p.shape[0]})")
        p, g = p[0], g[0]
    p_pts = np.argwhere(p == cls) * sp
    g_pts = np.argwhere(g == cls) * sp
    if p_pts.shape[0] == 0 and g_pts.shape[0] == 0:
        return 0.0
    if p_pts.shape[0] == 0 or g_pts.shape[0] == 0:
        return None
    p_tree, g_tree = cKDTree(p_pts), cKDTree(g_pts)
    pooled = np.concatenate([
        _directed_min_distances(p_pts, g_tree),
        _directed_min_distances(g_pts, p_tree),
    ])
    return nearest_rank_95(pooled)


@dataclass(frozen=True)
class ClassMetrics:
    dice: float
    hd95: Optional[float]


@dataclass(frozen=True)
class MetricReport:
    """Per-class metrics for one case plus means over defined entries."""

    per_class: dict[int, ClassMetrics]
    mean_dice: float
    mean_hd95: Optional[float]

    def row_values(self, case: str):
        for cls in sorted(self.per_class):
            m = self.per_class[cls]
            h = UNDEFINED if m.hd95 is None else repr(m.hd95)
            yield (case, str(cls), repr(m.dice), h)


def evaluate(pred, gt, num_classes: int, spacing=(1.0, 1.0, 1.0)
             ) -> MetricReport:
    """Dice and hd95 for every foreground class 1..K-1 of one case.

    Means run over defined entries only: dice is always defined, hd95
    entries that are undefined (one empty mask) are skipped; if every
    hd95 is undefined the mean itself is None.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    per = {}
    for cls in range(1, num_classes):
        per[cls] = ClassMetrics(dice=dice(pred, gt, cls),
                                hd95=hd95(pred, gt, cls, spacing))
    dices = [m.dice for m in per.values()]
    hds = [m.hd95 for m in per.values() if m.hd95 is not None]
    return MetricReport(
        per_class=per,
        mean_dice=float(np.mean(dices)),
        mean_hd95=float(np.mean(hds)) if hds else None,
    )


def write_report_csv(path, reports: Sequence[tuple[str, MetricReport]]
                     ) -> None:
    """One `case,class,dice,hd95` row per (case, foreground class)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for case, report in reports:
            for row in report.row_values(case):
                writer.writerow(row)
