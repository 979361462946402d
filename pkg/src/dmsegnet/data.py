"""Dataset plumbing: manifests, preprocessing, cropping, phantoms.

The manifest is one plain-text line per case,

    id,image_path[;image_path...],label_path,sd,sh,sw

with multi-modality cases listing one image path per modality. The
phantom generator builds small labelled volumes (random ellipsoids on a
zero background, one intensity band per class) so training and metric
behaviour can be exercised without any external dataset.
"""

import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .nifti import read_nifti, write_nifti


@dataclass(frozen=True)
class CaseRecord:
    id: str
    image_paths: tuple[str, ...]
    label_path: str
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if not self.id:
            raise DataError("case id must be non-empty")
        if not self.image_paths:
            raise DataError(f"case {self.id}: needs at least one image path")
        if any(s <= 0 for s in self.spacing):
            raise DataError(f"case {self.id}: spacing must be positive, got "
                            f"{self.spacing}")


def parse_manifest_line(line: str) -> CaseRecord:
    parts = [p.strip() for p in line.strip().split(",")]
    if len(parts) != 6:
        raise DataError(f"manifest line needs 6 comma-separated fields "
                        f"(id,images,label,sd,sh,sw), got {len(parts)}: "
                        f"{line!r}")
    cid, images, label, *sp = parts
    try:
        spacing = tuple(float(s) for s in sp)
    except ValueError as exc:
        raise DataError(f"case {cid}: bad spacing {sp}") from exc
    return CaseRecord(id=cid,
                      image_paths=tuple(p for p in images.split(";") if p),
                      label_path=label, spacing=spacing)


def read_manifest(path) -> list[CaseRecord]:
    records = []
    seen = set()
    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        rec = parse_manifest_line(raw)
        if rec.id in seen:
            raise DataError(f"duplicate case id {rec.id!r} in manifest")
        seen.add(rec.id)
        records.append(rec)
    if not records:
        raise DataError(f"manifest {path} lists no cases")
    return records


@dataclass
class LoadedCase:
    id: str
    image: np.ndarray  # [C, D, H, W] float32
    label: np.ndarray  # [D, H, W] integer
    spacing: tuple[float, float, float]


def load_case(record: CaseRecord, root: Optional[Path] = None) -> LoadedCase:
    """Read all modalities plus the label and stack to [C, D, H, W]."""
    base = Path(root) if root is not None else Path(".")

    def resolve(p):
        q = Path(p)
        return q if q.is_absolute() else base / q

    channels = []
    for p in record.image_paths:
        vol, _ = read_nifti(resolve(p))
        if vol.ndim == 4:
            channels.extend(vol.astype(np.float32))
        else:
            channels.append(vol.astype(np.float32))
    spatial = {c.shape for c in channels}
    if len(spatial) != 1:
        raise DataError(f"case {record.id}: modalities disagree on spatial "
                        f"dims: {sorted(spatial)}")
    image = np.stack(channels)
    label, _ = read_nifti(resolve(record.label_path))
    if not np.issubdtype(label.dtype, np.integer):
        raise DataError(f"case {record.id}: label volume must be integer, "
                        f"got {label.dtype}")
    if label.shape != image.shape[1:]:
        raise DataError(f"case {record.id}: label shape {label.shape} != "
                        f"image spatial dims {image.shape[1:]}")
    return LoadedCase(id=record.id, image=image,
                      label=label.astype(np.int64),
                      spacing=record.spacing)


def intensity_normalize(volume: np.ndarray, scheme: str = "zscore"
                        ) -> np.ndarray:
    """Per-modality intensity normalization.

    scheme "zscore": (x - mean) / std over each whole channel, with a
    unit divisor when std is zero so constant channels come back as
    zeros. scheme "window(lo,hi)": clip to [lo, hi] then rescale to
    [0, 1].
    """
    vol = np.asarray(volume, dtype=np.float32)
    channels = vol if vol.ndim == 4 else vol[None]
    name = scheme.strip()
    if name == "zscore":
        out = np.empty_like(channels)
        for i, ch in enumerate(channels):
            std = float(ch.std())
            out[i] = (ch - ch.mean()) / (std if std > 0 else 1.0)
    elif name.startswith("window(") and name.endswith(")"):
        try:
            lo, hi = (float(v) for v in name[len("window("):-1].split(","))
        except ValueError as exc:
            raise ValueError(f"bad window scheme {scheme!r}") from exc
        if not hi > lo:
            raise ValueError(f"window needs hi > lo, got {scheme!r}")
        out = (np.clip(channels, lo, hi) - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown normalization scheme {scheme!r}; use "
                         "'zscore' or 'window(lo,hi)'")
    return out if vol.ndim == 4 else out[0]


def random_crop(image: np.ndarray, label: np.ndarray,
                size: tuple[int, int, int], rng: np.random.Generator
                ) -> tuple[np.ndarray, np.ndarray]:
    """Cut the same uniformly random window from image and label.

    image [C, D, H, W], label [D, H, W]. Volumes smaller than the crop
    along any axis are reflect-padded (both arrays identically) up to
    the crop size first.
    """
    cd, ch, cw = (int(s) for s in size)
    if min(cd, ch, cw) < 1:
        raise ValueError(f"crop size must be positive, got {size}")
    dims = label.shape
    pads = [max(0, c - d) for c, d in zip((cd, ch, cw), dims)]
    if any(pads):
        spec = [(p // 2, p - p // 2) for p in pads]
        image = np.pad(image, [(0, 0)] + spec, mode="reflect")
        label = np.pad(label, spec, mode="reflect")
        dims = label.shape
    corner = [int(rng.integers(0, d - c + 1))
              for d, c in zip(dims, (cd, ch, cw))]
    sl = tuple(slice(o, o + c) for o, c in zip(corner, (cd, ch, cw)))
    return image[(slice(None), *sl)], label[sl]


def split_dataset(cases: Sequence, fractions=(0.7, 0.1, 0.2), seed: int = 0
                  ) -> tuple[list, list, list]:
    """Deterministic shuffled train/val/test partition.

    Counts are the floor allocation per fraction with the remainder
    handed out train-first (train, then val, then test).
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must be 3 non-negatives summing to 1, "
                        f"got {fractions}")
    n = len(cases)
    if n < 3:
        raise DataError(f"need at least 3 cases to split, got {n}")
    counts = [int(np.floor(n * f)) for f in fractions]
    rest = n - sum(counts)
    for i in range(rest):
        counts[i % 3] += 1
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [cases[i] for i in order]
    a, b = counts[0], counts[0] + counts[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


@dataclass(frozen=True)
class PhantomSpec:
    """Synthetic labelled volume: random ellipsoids on a zero background."""

    size: int = 32
    num_classes: int = 3
    shapes_per_class: tuple[int, int] = (1, 2)
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.size < 16 or self.size % 16 != 0:
            raise DataError(f"phantom size must be a positive multiple of "
                            f"16, got {self.size}")
        if self.num_classes < 2:
            raise DataError(f"phantom needs >= 2 classes, got "
                            f"{self.num_classes}")
        lo, hi = self.shapes_per_class
        if not (1 <= lo <= hi):
            raise DataError(f"shapes_per_class must be 1 <= lo <= hi, got "
                            f"{self.shapes_per_class}")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")


def class_intensity(cls: int) -> float:
    """Center of the intensity band for a class (background stays at 0)."""
    return float(cls)


def generate_phantom(spec: PhantomSpec, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray]:
    """One phantom: (image [1,S,S,S] float32, label [S,S,S] int64).

    Foreground classes are laid down in class order; ellipsoids only
    claim still-background voxels, so the label exactly matches the
    generating geometry and classes never overlap. Every foreground
    class is guaranteed at least one voxel.
    """
    s = spec.size
    grid = np.indices((s, s, s), dtype=np.float64)
    label = np.zeros((s, s, s), dtype=np.int64)
    lo, hi = spec.shapes_per_class
    for cls in range(1, spec.num_classes):
        placed = 0
        for _ in range(int(rng.integers(lo, hi + 1))):
            center = rng.uniform(s * 0.2, s * 0.8, size=3)
            axes = rng.uniform(s * 0.08, s * 0.2, size=3)
            dist = sum(((grid[i] - center[i]) / axes[i]) ** 2
                       for i in range(3))
            mask = (dist <= 1.0) & (label == 0)
            label[mask] = cls
            placed += int(mask.sum())
        while placed == 0:  # degenerate draw: claim one background voxel
            ijk = tuple(rng.integers(0, s, size=3))
            if label[ijk] == 0:
                label[ijk] = cls
                placed = 1
    image = label.astype(np.float64)  # class_intensity(c) == c
    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, size=label.shape)
    return image[None].astype(np.float32), label


def write_phantom_dataset(out_dir, spec: PhantomSpec, count: int,
                          spacing=(1.0, 1.0, 1.0)) -> Path:
    """Emit `count` phantoms as NIfTI pairs plus a manifest; returns its path."""
    if count < 1:
        raise DataError(f"count must be positive, got {count}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    lines = []
    for i in range(count):
        image, label = generate_phantom(spec, rng)
        img_path = out / f"phantom_{i:03d}_image.nii.gz"
        lab_path = out / f"phantom_{i:03d}_label.nii.gz"
        write_nifti(img_path, image[0].astype(np.float32), spacing)
        write_nifti(lab_path, label.astype(np.int16), spacing)
        lines.append(f"phantom_{i:03d},{img_path.name},{lab_path.name},"
                     f"{spacing[0]},{spacing[1]},{spacing[2]}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


class Prefetcher:
    """Bounded single-worker hand-off queue over an iterable.

    One worker keeps the source iteration order, so consumption is
    deterministic whenever the source is; the queue bound keeps at most
    `depth` prepared items ahead of the consumer.
    """

    _DONE = object()

    def __init__(self, source, depth: int = 2):
        self._queue = queue.Queue(maxsize=max(1, depth))
        self._error = None

        def run():
            try:
                for item in source:
                    self._queue.put(item)
            except BaseException as exc:  # propagate into the consumer
                self._error = exc
            finally:
                self._queue.put(self._DONE)

        self._thread = threading.Thread(target=run, daemon=True)
        self._thread.start()

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is self._DONE:
                self._thread.join()
                if self._error is not None:
                    raise self._error
                return
            yield item
