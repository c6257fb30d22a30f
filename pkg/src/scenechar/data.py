"""Image preprocessing, orientation augmentation, manifests and train/test splits.

A manifest lists one record per (base image, orientation). Images stay on disk
un-rotated; :func:`load_split` reads, converts to 50x50 grayscale in [0, 1] and
rotates on the fly.
"""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .tensor import INPUT_SHAPE, Shape2D, ShapeError

ORIENTATIONS = (-30.0, -15.0, 0.0, 15.0, 30.0)
IMAGE_SUFFIXES = (".png", ".pgm")
DEFAULT_TRAIN_COUNT, DEFAULT_TEST_COUNT = 2450, 250
BT601 = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# pixel operations
# ---------------------------------------------------------------------------


def grayscale(rgb) -> np.ndarray:
    """BT.601 luminance of an ``[H, W, 3]`` image; the value scale is preserved."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ShapeError(f"grayscale expects an [H, W, 3] image, got shape {rgb.shape}")
    return rgb @ np.array(BT601)


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill=None) -> np.ndarray:
    """Sample ``img`` at fractional coordinates.

    Coordinates outside ``[0, H-1] x [0, W-1]`` take ``fill``; with ``fill=None``
    they are clamped to the border instead.
    """
    h, w = img.shape
    if fill is None:
        ys = np.clip(ys, 0, h - 1)
        xs = np.clip(xs, 0, w - 1)
        inside = None
    else:
        # tolerance keeps exact-border samples in after trig round-off
        tol = 1e-9
        inside = (ys >= -tol) & (ys <= h - 1 + tol) & (xs >= -tol) & (xs <= w - 1 + tol)
        ys = np.clip(ys, 0, h - 1)
        xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    dy = ys - y0
    dx = xs - x0
    top = img[y0, x0] * (1 - dx) + img[y0, x1] * dx
    bottom = img[y1, x0] * (1 - dx) + img[y1, x1] * dx
    out = top * (1 - dy) + bottom * dy
    if inside is not None:
        out = np.where(inside, out, fill)
    return out


def resize_bilinear(image, target: Shape2D) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and edge clamping."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ShapeError(f"resize expects a non-empty 2-D image, got shape {img.shape}")
    th, tw = Shape2D(*target).validate()
    h, w = img.shape
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    return _bilinear_sample(img, ys[:, None], xs[None, :])


def rotate(image, angle: float) -> np.ndarray:
    """Rotate counter-clockwise by ``angle`` degrees about the image centre.

    Pixels whose source falls outside the image take the image's mean intensity.
    """
    img = np.asarray(image, dtype=np.float64)
    if not math.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle}")
    if angle == 0:
        return img.copy()
    h, w = img.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    t = math.radians(angle)
    c, s = math.cos(t), math.sin(t)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: rotate output coordinates clockwise (y axis points down)
    src_x = cx + c * dx - s * dy
    src_y = cy + s * dx + c * dy
    return _bilinear_sample(img, src_y, src_x, fill=float(img.mean()))


def read_image(path) -> np.ndarray:
    """Load a PNG/PGM file as a 2-D float array scaled to [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            peak = 65535.0 if im.mode.startswith("I;16") or arr.max() > 255 else 255.0
            return arr / peak
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return grayscale(rgb)


def write_png(path, image) -> None:
    """Write a [0, 1] grayscale image as 8-bit PNG."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def preprocess(image, target: Shape2D = INPUT_SHAPE) -> np.ndarray:
    """Bring an RGB or grayscale array of any size to a ``target`` grayscale image in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[-1] == 4:
            img = img[..., :3]
        img = grayscale(img)
    if img.max(initial=0.0) > 1.0:
        img = img / 255.0
    if img.shape != tuple(target):
        img = resize_bilinear(img, target)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# samples and augmentation
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    image: np.ndarray  # [1, 50, 50] in [0, 1]
    label: int
    orientation_deg: float = 0.0
    split: str | None = None
    source_id: str = ""

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim == 2:
            img = img[None]
        if img.shape != (1, *INPUT_SHAPE):
            raise ShapeError(f"sample image must be 1x50x50, got {img.shape}")
        if img.min() < 0 or img.max() > 1:
            raise ValueError("sample pixels must lie in [0, 1]")
        self.image = img


def augment_five(sample: Sample, angles: Sequence[float] = ORIENTATIONS) -> list[Sample]:
    """One rotated copy of an upright sample per orientation angle."""
    if sample.orientation_deg != 0:
        raise ValueError("augment_five expects an upright (0 degree) base sample")
    out = []
    for angle in angles:
        img = np.clip(rotate(sample.image[0], angle), 0.0, 1.0)
        out.append(replace(sample, image=img[None], orientation_deg=float(angle)))
    return out


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    path: str  # absolute, or relative to the manifest file once written
    label: int
    class_name: str
    orientation_deg: float
    source_id: str
    split: str | None = None


@dataclass
class DatasetManifest:
    records: list[Record]
    class_names: list[str]
    base_dir: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def select(self, split: str) -> list[Record]:
        return [r for r in self.records if r.split == split]

    def counts(self, split: str | None = None, by: str = "record") -> np.ndarray:
        """Per-class counts of records (or of distinct base images with ``by='source'``)."""
        counts = np.zeros(self.num_classes, dtype=int)
        seen = set()
        for r in self.records:
            if split is not None and r.split != split:
                continue
            if by == "source":
                if r.source_id in seen:
                    continue
                seen.add(r.source_id)
            counts[r.label] += 1
        return counts

    def resolve(self, record: Record) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        for r in self.records:
            if not 0 <= r.label < self.num_classes:
                raise ValueError(f"label {r.label} out of range for {self.num_classes} classes")
        if any(r.split is not None for r in self.records):
            missing = np.flatnonzero(self.counts("train") == 0)
            if missing.size:
                names = [self.class_names[i] for i in missing]
                raise ValueError(f"classes absent from train split: {names}")
            other = [r for r in self.records if r.split not in ("train", "test")]
            if other:
                raise ValueError(f"unknown split {other[0].split!r}")


def build_manifest(root_dir, angles: Sequence[float] = ORIENTATIONS) -> DatasetManifest:
    """Scan ``root/<class_name>/<image>`` and emit one record per image and angle.

    Labels follow the sorted order of class directory names.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")
    records = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"class directory {cdir} holds no PNG/PGM images")
        for f in files:
            source = f.relative_to(root).as_posix()
            for angle in angles:
                records.append(Record(str(f.resolve()), label, cdir.name, float(angle), source))
    return DatasetManifest(records, [d.name for d in class_dirs], root.resolve())


def split_dataset(manifest: DatasetManifest, train_count: int, test_count: int, seed: int,
                  group_orientations: bool = True) -> DatasetManifest:
    """Stratified, seeded train/test assignment.

    With ``group_orientations`` every rotated copy of a base image lands in the
    same split, and the per-class balance is counted in base images.  Otherwise
    each record is placed independently.  Each class must end up in both splits.
    """
    total = len(manifest.records)
    if train_count < 0 or test_count < 0 or train_count + test_count != total:
        raise ValueError(f"train {train_count} + test {test_count} must equal {total} records")

    groups: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(manifest.records):
        groups[r.source_id if group_orientations else f"{i}"].append(i)
    sizes = {len(v) for v in groups.values()}
    if len(sizes) != 1:
        raise ValueError(f"base images have differing orientation counts {sorted(sizes)}")
    gsize = sizes.pop()
    if test_count % gsize:
        raise ValueError(f"test count {test_count} is not a multiple of the {gsize} orientations per image")
    test_groups = test_count // gsize

    by_class: dict[int, list[str]] = defaultdict(list)
    for key, idx in groups.items():
        by_class[manifest.records[idx[0]].label].append(key)
    n_classes = manifest.num_classes
    if len(by_class) != n_classes:
        raise ValueError("every class needs at least one image")

    rng = np.random.default_rng(seed)
    quota = np.full(n_classes, test_groups // n_classes)
    extra = test_groups - quota.sum()
    capacity = np.array([len(by_class[c]) - 1 for c in range(n_classes)])
    order = rng.permutation(n_classes)
    for c in order:
        if extra == 0:
            break
        if quota[c] < capacity[c]:
            quota[c] += 1
            extra -= 1
    if extra or np.any(quota < 1) or np.any(quota > capacity):
        raise ValueError(
            f"cannot place {test_groups} test images so that all {n_classes} classes appear in both splits"
        )

    test_keys = set()
    for c in range(n_classes):
        keys = sorted(by_class[c])
        pick = rng.permutation(len(keys))[: quota[c]]
        test_keys.update(keys[i] for i in pick)
    split_of = {}
    for key, idx in groups.items():
        for i in idx:
            split_of[i] = "test" if key in test_keys else "train"
    records = [replace(r, split=split_of[i]) for i, r in enumerate(manifest.records)]
    out = DatasetManifest(records, list(manifest.class_names), manifest.base_dir)
    out.validate()
    return out


def write_manifest(manifest: DatasetManifest, path) -> Path:
    """Write JSON lines; image paths are stored relative to the manifest's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    here = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            rel = os.path.relpath(manifest.resolve(r).resolve(), here)
            row = {
                "path": Path(rel).as_posix(),
                "label": r.label,
                "class_name": r.class_name,
                "split": r.split,
                "orientation_deg": r.orientation_deg,
                "source_id": r.source_id,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    names: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            rec = Record(row["path"], int(row["label"]), row["class_name"],
                         float(row["orientation_deg"]), row["source_id"], row.get("split"))
            records.append(rec)
            if names.setdefault(rec.label, rec.class_name) != rec.class_name:
                raise ValueError(f"label {rec.label} maps to two class names")
    if not records:
        raise ValueError(f"manifest {path} is empty")
    n = max(names) + 1
    class_names = [names.get(i, f"class_{i:02d}") for i in range(n)]
    m = DatasetManifest(records, class_names, path.parent.resolve())
    m.validate()
    return m


def load_records(manifest: DatasetManifest, records: Iterable[Record]) -> tuple[np.ndarray, np.ndarray]:
    """Images ``[N, 1, 50, 50]`` and labels for ``records``, rotated per record."""
    cache: dict[Path, np.ndarray] = {}
    images, labels = [], []
    for r in records:
        p = manifest.resolve(r)
        if p not in cache:
            if not p.is_file():
                raise FileNotFoundError(f"image not found: {p}")
            cache[p] = preprocess(read_image(p))
        img = cache[p]
        if r.orientation_deg:
            img = np.clip(rotate(img, r.orientation_deg), 0.0, 1.0)
        images.append(img)
        labels.append(r.label)
    x = np.stack(images)[:, None] if images else np.zeros((0, 1, *INPUT_SHAPE))
    return x, np.asarray(labels, dtype=np.int64)


def load_split(manifest: DatasetManifest, split: str) -> tuple[np.ndarray, np.ndarray]:
    return load_records(manifest, manifest.select(split))
