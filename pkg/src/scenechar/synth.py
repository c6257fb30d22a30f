"""Procedural glyph corpus used in place of the unavailable scene-character images.

Each class is a stroke "body" (bars, bowls, loops, hooks) combined with a dot
pattern, much like letter families that differ only by their dots.  Samples
are anti-aliased renderings with random placement, scale, stroke width,
contrast and pixel noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (ORIENTATIONS, DEFAULT_TEST_COUNT, DEFAULT_TRAIN_COUNT, DatasetManifest, build_manifest,
                   load_split, split_dataset, write_manifest, write_png)
from .tensor import INPUT_SHAPE

GLYPH_RADIUS_PX = 18.0
MAX_SHIFT_PX = 2.0
SCALE_JITTER = 0.10
NOISE_SIGMA = 0.02
STROKE_HALF_WIDTH = (0.14, 0.18)  # in glyph units
BACKGROUND = (0.8, 0.9)
FOREGROUND = (0.1, 0.2)


@dataclass(frozen=True)
class Segment:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class Arc:
    cx: float
    cy: float
    r: float
    start_deg: float
    stop_deg: float


@dataclass(frozen=True)
class Dot:
    cx: float
    cy: float
    r: float = 0.2


def _humps(x0, x1, y, n):
    step = (x1 - x0) / n
    return [Arc(x0 + step * (i + 0.5), y, step / 2, 0, 180) for i in range(n)]


# glyph frame: x right, y up, body roughly inside [-0.8, 0.8]^2
BODIES = [
    [Segment(0.0, -0.8, 0.0, 0.8)],
    [Arc(0.0, 0.1, 0.7, 190, 350), Segment(-0.69, 0.0, -0.69, 0.3), Segment(0.69, 0.0, 0.69, 0.3)],
    [Segment(-0.5, 0.55, 0.5, 0.55), Arc(0.0, -0.15, 0.55, 90, 300)],
    [Segment(-0.45, 0.6, 0.35, 0.0), Segment(0.35, 0.0, -0.45, -0.6)],
    [Arc(-0.6, 0.3, 0.9, 270, 360), Segment(0.3, 0.3, 0.3, 0.6)],
    _humps(-0.75, 0.15, 0.1, 3) + [Arc(0.4, 0.1, 0.25, 180, 360), Segment(0.65, 0.1, 0.65, 0.3)],
    [Arc(0.1, 0.25, 0.35, 0, 360), Segment(-0.7, -0.1, 0.45, -0.1), Arc(-0.7, 0.2, 0.3, 180, 270)],
    [Arc(0.2, -0.2, 0.35, 0, 360), Segment(-0.25, -0.55, -0.25, 0.8)],
    [Arc(0.1, 0.45, 0.3, 60, 300), Arc(0.0, -0.35, 0.45, 150, 390)],
]
DOT_PATTERNS = [
    [],
    [Dot(0.0, 0.92)],
    [Dot(-0.25, -0.92), Dot(0.25, -0.92)],
]
NUM_GLYPHS = len(BODIES) * len(DOT_PATTERNS)


def glyph_primitives(label: int) -> list:
    if not 0 <= label < NUM_GLYPHS:
        raise ValueError(f"glyph label must be in [0, {NUM_GLYPHS}), got {label}")
    body, dots = divmod(label, len(DOT_PATTERNS))
    return BODIES[body] + DOT_PATTERNS[dots]


def class_name(label: int) -> str:
    return f"glyph_{label:02d}"


def _segment_distance(px, py, s: Segment):
    dx, dy = s.x1 - s.x0, s.y1 - s.y0
    t = ((px - s.x0) * dx + (py - s.y0) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (s.x0 + t * dx), py - (s.y0 + t * dy))


def _arc_distance(px, py, a: Arc):
    vx, vy = px - a.cx, py - a.cy
    ang = np.degrees(np.arctan2(vy, vx))
    span = a.stop_deg - a.start_deg
    rel = np.mod(ang - a.start_deg, 360.0)
    on_arc = rel <= span if span < 360 else np.ones_like(rel, dtype=bool)
    ring = np.abs(np.hypot(vx, vy) - a.r)
    ends = []
    for deg in (a.start_deg, a.stop_deg):
        ex = a.cx + a.r * math.cos(math.radians(deg))
        ey = a.cy + a.r * math.sin(math.radians(deg))
        ends.append(np.hypot(px - ex, py - ey))
    return np.where(on_arc, ring, np.minimum(*ends))


def render_glyph(label: int, rng: np.random.Generator | None = None, size=INPUT_SHAPE) -> np.ndarray:
    """Render one jittered sample of glyph ``label`` as a [0, 1] image.

    Without ``rng`` the canonical, un-jittered glyph is drawn (no noise).
    """
    h, w = size
    if rng is None:
        scale, shift, stroke = 1.0, (0.0, 0.0), sum(STROKE_HALF_WIDTH) / 2
        bg, fg, sigma = sum(BACKGROUND) / 2, sum(FOREGROUND) / 2, 0.0
    else:
        scale = 1.0 + rng.uniform(-SCALE_JITTER, SCALE_JITTER)
        shift = tuple(rng.uniform(-MAX_SHIFT_PX, MAX_SHIFT_PX, size=2))
        stroke = rng.uniform(*STROKE_HALF_WIDTH)
        bg = rng.uniform(*BACKGROUND)
        fg = rng.uniform(*FOREGROUND)
        sigma = NOISE_SIGMA
    radius = GLYPH_RADIUS_PX * scale
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px = (xx - (w - 1) / 2 - shift[0]) / radius
    py = -(yy - (h - 1) / 2 - shift[1]) / radius

    dist = np.full((h, w), np.inf)
    for prim in glyph_primitives(label):
        if isinstance(prim, Segment):
            d = _segment_distance(px, py, prim) - stroke
        elif isinstance(prim, Arc):
            d = _arc_distance(px, py, prim) - stroke
        else:
            d = np.hypot(px - prim.cx, py - prim.cy) - prim.r
        dist = np.minimum(dist, d)
    # one-pixel anti-aliasing ramp
    ink = np.clip(0.5 - dist * radius, 0.0, 1.0)
    img = bg + (fg - bg) * ink
    if sigma:
        img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def nearest_centroid_accuracy(x_train, y_train, x_test, y_test) -> float:
    """Accuracy of classifying raw pixels by the closest per-class mean image."""
    xt = x_train.reshape(len(x_train), -1)
    xs = x_test.reshape(len(x_test), -1)
    classes = np.unique(y_train)
    centroids = np.stack([xt[y_train == c].mean(axis=0) for c in classes])
    d = ((xs[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[d.argmin(axis=1)] == y_test))


def default_test_count(num_classes: int, base_per_class: int, orientations: int) -> int:
    """Test size in records, keeping the 2450/250 proportion at one image granularity."""
    if (num_classes, base_per_class, orientations) == (NUM_GLYPHS, 20, 5):
        return DEFAULT_TEST_COUNT
    groups = num_classes * base_per_class
    fraction = DEFAULT_TEST_COUNT / (DEFAULT_TRAIN_COUNT + DEFAULT_TEST_COUNT)
    return max(num_classes, round(groups * fraction)) * orientations


def synth_generate(out_dir, num_classes: int = NUM_GLYPHS, base_per_class: int = 20, seed: int = 0,
                   test_count: int | None = None, angles=ORIENTATIONS) -> tuple[DatasetManifest, dict]:
    """Write ``out/<class>/<class>_<i>.png`` plus ``manifest.jsonl`` and ``synth_info.json``.

    The manifest carries every orientation of every base image, split with the
    same seed.  ``synth_info.json`` records the nearest-centroid test accuracy
    as a separability check.
    """
    if not 1 <= num_classes <= NUM_GLYPHS:
        raise ValueError(f"num_classes must be in [1, {NUM_GLYPHS}]")
    if base_per_class < 1:
        raise ValueError("base_per_class must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for label in range(num_classes):
        cdir = out / class_name(label)
        cdir.mkdir(exist_ok=True)
        for i in range(base_per_class):
            write_png(cdir / f"{class_name(label)}_{i:03d}.png", render_glyph(label, rng))

    manifest = build_manifest(out, angles)
    if test_count is None:
        test_count = default_test_count(num_classes, base_per_class, len(angles))
    manifest = split_dataset(manifest, len(manifest.records) - test_count, test_count, seed)
    write_manifest(manifest, out / "manifest.jsonl")

    x_train, y_train = load_split(manifest, "train")
    x_test, y_test = load_split(manifest, "test")
    info = {
        "num_classes": num_classes,
        "base_per_class": base_per_class,
        "seed": seed,
        "angles": list(angles),
        "train": int(len(y_train)),
        "test": int(len(y_test)),
        "nearest_centroid_accuracy": nearest_centroid_accuracy(x_train, y_train, x_test, y_test),
    }
    (out / "synth_info.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return manifest, info
