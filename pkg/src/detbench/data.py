"""Synthetic detection scenes and COCO-JSON / PPM interchange.

Scenes hold 1-6 non-overlapping filled shapes, one shape kind per class,
each with a class-specific color, on a noisy gray background. Object sizes
are drawn per size band. Bands are defined in a 256-pixel reference frame
(small < 32^2, medium < 96^2, large >= 96^2), so on an ``M``-pixel image a
small object has a side below ``M / 8``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluation import AREA_RANGES, GroundTruth
from .postprocess import Detections

SIZE_REFERENCE = 256
SHAPES = ("rectangle", "ellipse", "triangle")
BANDS = ("small", "medium", "large")
CLASS_COLORS = np.array([[0.9, 0.2, 0.2], [0.2, 0.85, 0.25], [0.2, 0.3, 0.95]])
COLOR_JITTER = 0.08
LARGE_MAX_SIDE = 160.0  # reference pixels
SMALL_MIN_SIDE = 16.0
_MAX_TRIES = 50


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class DatasetSpec:
    image_size: int = 64
    num_images: int = 100
    classes: tuple[str, ...] = SHAPES
    size_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    noise: float = 0.05
    seed: int = 0
    max_objects: int = 6

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "size_mix", tuple(float(w) for w in self.size_mix))
        if any(c not in SHAPES for c in self.classes) or not self.classes:
            raise ValueError(f"classes must be drawn from {SHAPES}")
        if len(self.size_mix) != 3 or min(self.size_mix) < 0 or not math.isclose(sum(self.size_mix), 1.0):
            raise ValueError("size_mix must be three nonnegative weights summing to 1")
        if self.num_images < 0 or not 1 <= self.max_objects <= 6:
            raise ValueError("num_images must be >= 0 and max_objects in [1, 6]")
        lo, hi = band_side_range("small", self.image_size)
        if self.size_mix[0] > 0 and math.floor(hi - 1e-9) < 2:
            raise ValueError(f"image size {self.image_size} too small to render small objects")
        lo, hi = band_side_range("large", self.image_size)
        if self.size_mix[2] > 0 and lo >= self.image_size:
            raise ValueError(f"image size {self.image_size} too small to fit large objects")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "num_images": self.num_images,
            "classes": list(self.classes),
            "size_mix": list(self.size_mix),
            "noise": self.noise,
            "seed": self.seed,
            "max_objects": self.max_objects,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scene:
    image: np.ndarray  # (M, M, 3) in [0, 1]
    boxes: np.ndarray  # (n, 4) pixel [ymin, xmin, ymax, xmax]
    classes: np.ndarray  # (n,) in 1..K
    seed: tuple[int, int] = (0, 0)
    bands: list[str] = field(default_factory=list)

    @property
    def image_size(self) -> int:
        return self.image.shape[0]

    def groundtruth(self) -> GroundTruth:
        return GroundTruth(self.boxes, self.classes, area_scale(self.image_size))


def area_scale(image_size: int) -> float:
    return (SIZE_REFERENCE / image_size) ** 2


def band_side_range(band: str, image_size: int) -> tuple[float, float]:
    """Side-length range (pixels) whose squared length lies in ``band``."""
    lo, hi = AREA_RANGES[band]
    f = image_size / SIZE_REFERENCE
    lo_side = max(math.sqrt(lo), SMALL_MIN_SIDE) * f
    hi_side = (LARGE_MAX_SIDE if math.isinf(hi) else math.sqrt(hi)) * f
    return lo_side, hi_side


def band_of(area_px: float, image_size: int) -> str:
    a = area_px * area_scale(image_size)
    for band in BANDS:
        lo, hi = AREA_RANGES[band]
        if lo <= a < hi:
            return band
    raise AssertionError(a)


def shape_mask(kind: str, y0: int, x0: int, h: int, w: int, size: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the shape."""
    py = np.arange(size)[:, None] + 0.5
    px = np.arange(size)[None, :] + 0.5
    inbox = (py >= y0) & (py < y0 + h) & (px >= x0) & (px < x0 + w)
    if kind == "rectangle":
        return inbox
    yc, xc = y0 + h / 2, x0 + w / 2
    if kind == "ellipse":
        return ((py - yc) / (h / 2)) ** 2 + ((px - xc) / (w / 2)) ** 2 <= 1.0
    # Apex at top center, base along the bottom edge.
    half = 0.5 * w * (py - y0) / h
    return inbox & (np.abs(px - xc) <= half + 0.5)


def _draw_size(rng, band: str, m: int) -> tuple[int, int] | None:
    lo, hi = band_side_range(band, m)
    for _ in range(_MAX_TRIES):
        side = rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        w = max(1, round(side * math.sqrt(ratio)))
        h = max(1, round(side / math.sqrt(ratio)))
        if w <= m and h <= m and band_of(w * h, m) == band:
            return h, w
    return None


def _free_positions(occupied: np.ndarray, h: int, w: int) -> np.ndarray:
    """Top-left corners where an ``h x w`` box keeps a 1-pixel gap from every occupied pixel."""
    m = occupied.shape[0]
    padded = np.pad(occupied, 1).astype(np.int64)
    sat = np.pad(padded.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    # Window of (h + 2) x (w + 2) in padded coordinates covers the box plus its margin.
    ys, xs = np.arange(m - h + 1)[:, None], np.arange(m - w + 1)[None, :]
    total = sat[ys + h + 2, xs + w + 2] - sat[ys, xs + w + 2] - sat[ys + h + 2, xs] + sat[ys, xs]
    return np.argwhere(total == 0)


def generate_scene(spec: DatasetSpec, index: int) -> Scene:
    """Render scene ``index``; deterministic in ``(spec.seed, index)``."""
    m = spec.image_size
    rng = np.random.default_rng([spec.seed, index])
    n_obj = int(rng.integers(1, spec.max_objects + 1))
    background = rng.uniform(0.35, 0.65)
    image = np.full((m, m, 3), background)
    if spec.noise > 0:
        image = image + spec.noise * rng.standard_normal((m, m, 3))

    objects = []
    for _ in range(n_obj):
        cls = int(rng.integers(spec.num_classes))
        band = BANDS[int(rng.choice(3, p=spec.size_mix))]
        size = _draw_size(rng, band, m)
        if size is not None:
            objects.append((cls, band, size))
    # Largest first, so big shapes are not crowded out by small ones.
    objects.sort(key=lambda o: -o[2][0] * o[2][1])

    occupied = np.zeros((m, m), dtype=bool)
    boxes, classes, bands = [], [], []
    for cls, band, (h, w) in objects:
        free = _free_positions(occupied, h, w)
        # Out of room: redraw the size within the same band.
        for _ in range(_MAX_TRIES):
            if len(free):
                break
            size = _draw_size(rng, band, m)
            if size is not None:
                h, w = size
                free = _free_positions(occupied, h, w)
        if len(free) == 0:
            continue
        y0, x0 = (int(v) for v in free[int(rng.integers(len(free)))])
        color = CLASS_COLORS[SHAPES.index(spec.classes[cls])] + rng.uniform(-COLOR_JITTER, COLOR_JITTER, 3)
        mask = shape_mask(spec.classes[cls], y0, x0, h, w, m)
        image[mask] = color
        occupied[y0 : y0 + h, x0 : x0 + w] = True
        boxes.append((y0, x0, y0 + h, x0 + w))
        classes.append(cls + 1)
        bands.append(band)

    return Scene(
        np.clip(image, 0.0, 1.0),
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
        np.asarray(classes, dtype=np.int64),
        (spec.seed, index),
        bands,
    )


def generate_dataset(spec: DatasetSpec, start: int = 0) -> list[Scene]:
    return [generate_scene(spec, start + i) for i in range(spec.num_images)]


def resize_scene(scene: Scene, size: int) -> Scene:
    """Downsample by an integer factor with box (area) averaging; boxes scale along."""
    m = scene.image_size
    if size == m:
        return scene
    if m % size:
        raise ValueError(f"can only downsample {m} by an integer factor, not to {size}")
    f = m // size
    image = scene.image.reshape(size, f, size, f, 3).mean(axis=(1, 3))
    return Scene(image, scene.boxes / f, scene.classes.copy(), scene.seed, list(scene.bands))


def flip_scene(scene: Scene, vertical: bool = False) -> Scene:
    """Mirror left to right (or top to bottom); boxes follow."""
    m = scene.image_size
    b = scene.boxes.reshape(-1, 4)
    if vertical:
        boxes = np.column_stack([m - b[:, 2], b[:, 1], m - b[:, 0], b[:, 3]])
        image = scene.image[::-1].copy()
    else:
        boxes = np.column_stack([b[:, 0], m - b[:, 3], b[:, 2], m - b[:, 1]])
        image = scene.image[:, ::-1].copy()
    return Scene(image, boxes, scene.classes.copy(), scene.seed, list(scene.bands))


# ------------------------------------------------------------------ PPM I/O


def write_ppm(image: np.ndarray, path) -> None:
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise DataError(f"{path}: expected an RGB image, got mode {im.mode}")
        return np.asarray(im, dtype=np.float64) / 255.0


def image_filename(image_id: int) -> str:
    return f"{image_id:06d}.ppm"


# ----------------------------------------------------------------- COCO I/O


def corners_to_xywh(box) -> list[float]:
    ymin, xmin, ymax, xmax = (float(v) for v in box)
    return [xmin, ymin, xmax - xmin, ymax - ymin]


def xywh_to_corners(bbox) -> list[float]:
    x, y, w, h = (float(v) for v in bbox)
    return [y, x, y + h, x + w]


def _atomic_write_json(obj, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_coco_groundtruth(scenes: list[Scene], path, classes=SHAPES, image_ids=None) -> None:
    image_ids = list(range(1, len(scenes) + 1)) if image_ids is None else list(image_ids)
    images, anns = [], []
    for img_id, scene in zip(image_ids, scenes):
        m = scene.image_size
        images.append({"id": img_id, "width": m, "height": m, "file_name": image_filename(img_id)})
        for box, cls in zip(scene.boxes, scene.classes):
            bbox = corners_to_xywh(box)
            anns.append(
                {
                    "id": len(anns) + 1,
                    "image_id": img_id,
                    "category_id": int(cls),
                    "bbox": bbox,
                    "area": bbox[2] * bbox[3],
                    "iscrowd": 0,
                }
            )
    doc = {
        "info": {"size_reference": SIZE_REFERENCE},
        "images": images,
        "annotations": anns,
        "categories": [{"id": i + 1, "name": n} for i, n in enumerate(classes)],
    }
    _atomic_write_json(doc, path)


def _require(record: dict, keys, where: str):
    missing = [k for k in keys if k not in record]
    if missing:
        raise DataError(f"{where}: missing required field(s) {missing}")


@dataclass
class CocoGroundTruth:
    gts: dict[int, GroundTruth]
    categories: dict[int, str]
    images: dict[int, dict]


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def load_coco_groundtruth(path) -> CocoGroundTruth:
    doc = _read_json(path)
    _require(doc, ("images", "annotations", "categories"), str(path))
    ref = doc.get("info", {}).get("size_reference")
    images, cats = {}, {}
    for im in doc["images"]:
        _require(im, ("id", "width", "height"), "image")
        images[int(im["id"])] = im
    for c in doc["categories"]:
        _require(c, ("id", "name"), "category")
        cats[int(c["id"])] = c["name"]
    boxes = {i: [] for i in images}
    classes = {i: [] for i in images}
    for ann in doc["annotations"]:
        _require(ann, ("id", "image_id", "category_id", "bbox", "area"), "annotation")
        img, cat = int(ann["image_id"]), int(ann["category_id"])
        if img not in images:
            raise DataError(f"annotation {ann['id']}: unknown image_id {img}")
        if cat not in cats:
            raise DataError(f"annotation {ann['id']}: unknown category_id {cat}")
        boxes[img].append(xywh_to_corners(ann["bbox"]))
        classes[img].append(cat)
    gts = {}
    for i, im in images.items():
        scale = 1.0 if ref is None else (ref / im["width"]) * (ref / im["height"])
        gts[i] = GroundTruth(np.asarray(boxes[i], dtype=np.float64).reshape(-1, 4), classes[i], scale)
    return CocoGroundTruth(gts, cats, images)


def load_coco_detections(path, groundtruth: CocoGroundTruth | None = None) -> dict[int, Detections]:
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise DataError(f"{path}: detections must be a JSON list")
    rows: dict[int, list] = {}
    for rec in doc:
        _require(rec, ("image_id", "category_id", "bbox", "score"), "detection")
        img, cat = int(rec["image_id"]), int(rec["category_id"])
        if groundtruth is not None:
            if img not in groundtruth.images:
                raise DataError(f"detection: unknown image_id {img}")
            if cat not in groundtruth.categories:
                raise DataError(f"detection: unknown category_id {cat}")
        rows.setdefault(img, []).append((xywh_to_corners(rec["bbox"]), cat, float(rec["score"])))
    return {
        img: Detections([r[0] for r in rs], [r[1] for r in rs], [r[2] for r in rs]) for img, rs in sorted(rows.items())
    }


def write_coco_detections(dets: dict[int, Detections], path) -> None:
    out = []
    for img in sorted(dets):
        d = dets[img]
        for box, cat, score in zip(d.boxes, d.classes, d.scores):
            out.append({"image_id": int(img), "category_id": int(cat), "bbox": corners_to_xywh(box), "score": float(score)})
    _atomic_write_json(out, path)
