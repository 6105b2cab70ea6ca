"""COCO-style keypoint annotation schema: categories, instances, splits.

Annotation JSON layout::

    {"categories": [{"id", "name", "keypoint_names": [...]}],
     "images":     [{"id", "file", "width", "height"}],
     "annotations":[{"id", "image_id", "category_id",
                     "bbox": [x, y, w, h], "keypoints": [x1, y1, v1, ...]}]}

Visibility flags follow the COCO convention: 0 = unlabeled, 1 = labeled
but occluded, 2 = visible. Keypoints with v > 0 are supervised targets;
v = 0 keypoints are masked out of losses, metrics and feature pooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class AnnotationError(ValueError):
    """Raised on schema violations or inconsistent annotation records."""


@dataclass(frozen=True)
class CategoryDef:
    id: int
    name: str
    keypoint_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.keypoint_names) < 1:
            raise AnnotationError(f"category {self.id!r}: needs >= 1 keypoint")
        if len(set(self.keypoint_names)) != len(self.keypoint_names):
            raise AnnotationError(f"category {self.id!r}: duplicate keypoint names")

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoint_names)


@dataclass(frozen=True)
class InstanceAnnotation:
    id: int
    image_ref: str
    image_size: tuple[int, int]  # (width, height) px
    category_id: int
    bbox: tuple[float, float, float, float]  # (x, y, w, h) px
    keypoints: tuple[tuple[float, float, int], ...]  # (x, y, v)

    def __post_init__(self) -> None:
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise AnnotationError(f"annotation {self.id}: bbox sides must be positive")
        for kx, ky, v in self.keypoints:
            if v not in (0, 1, 2):
                raise AnnotationError(f"annotation {self.id}: visibility must be 0/1/2")
            if v > 0:
                width, height = self.image_size
                if not (0 <= kx <= width and 0 <= ky <= height):
                    raise AnnotationError(
                        f"annotation {self.id}: labeled keypoint ({kx}, {ky}) "
                        f"outside image bounds {self.image_size}"
                    )

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True)
class DatasetSplit:
    train_categories: frozenset[int]
    val_categories: frozenset[int]
    test_categories: frozenset[int]

    def __post_init__(self) -> None:
        if (self.train_categories & self.val_categories
                or self.train_categories & self.test_categories
                or self.val_categories & self.test_categories):
            raise AnnotationError("split category sets must be pairwise disjoint")


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise AnnotationError(f"{where}: missing field {key!r}")
    return record[key]


def load_annotations(path) -> tuple[list[CategoryDef], list[InstanceAnnotation]]:
    """Parse an annotation file, validating every record against its category."""
    path = Path(path)
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"{path}: not valid JSON ({exc})") from exc

    for section in ("categories", "images", "annotations"):
        if section not in raw or not isinstance(raw[section], list):
            raise AnnotationError(f"{path}: missing or non-list section {section!r}")

    categories = []
    for rec in raw["categories"]:
        where = f"category {rec.get('id', '?')}"
        categories.append(CategoryDef(
            id=int(_require(rec, "id", where)),
            name=str(_require(rec, "name", where)),
            keypoint_names=tuple(_require(rec, "keypoint_names", where)),
        ))
    by_cat = {c.id: c for c in categories}
    if len(by_cat) != len(categories):
        raise AnnotationError(f"{path}: duplicate category ids")

    images = {}
    for rec in raw["images"]:
        where = f"image {rec.get('id', '?')}"
        images[int(_require(rec, "id", where))] = rec

    instances = []
    for rec in raw["annotations"]:
        where = f"annotation {rec.get('id', '?')}"
        ann_id = int(_require(rec, "id", where))
        image_id = int(_require(rec, "image_id", where))
        category_id = int(_require(rec, "category_id", where))
        if image_id not in images:
            raise AnnotationError(f"{where}: unknown image_id {image_id}")
        if category_id not in by_cat:
            raise AnnotationError(f"{where}: unknown category_id {category_id}")
        flat = _require(rec, "keypoints", where)
        if len(flat) % 3 != 0:
            raise AnnotationError(
                f"{where}: keypoints length {len(flat)} is not a multiple of 3")
        triplets = tuple(
            (float(flat[i]), float(flat[i + 1]), int(flat[i + 2]))
            for i in range(0, len(flat), 3)
        )
        expected = by_cat[category_id].num_keypoints
        if len(triplets) != expected:
            raise AnnotationError(
                f"{where}: {len(triplets)} keypoints but category "
                f"{category_id} defines {expected}")
        img = images[image_id]
        file_field = img.get("file", img.get("file_name"))
        if file_field is None:
            raise AnnotationError(f"image {image_id}: missing 'file'")
        image_path = path.parent / file_field
        instances.append(InstanceAnnotation(
            id=ann_id,
            image_ref=str(image_path),
            image_size=(int(img["width"]), int(img["height"])),
            category_id=category_id,
            bbox=tuple(float(v) for v in _require(rec, "bbox", where)),
            keypoints=triplets,
        ))
    return categories, instances


def save_annotations(path, categories, instances, image_files=None) -> None:
    """Write categories and instances in the annotation JSON layout.

    ``image_files`` maps instance id -> file name relative to the output
    directory; by default the basename of each instance's image_ref is used.
    """
    path = Path(path)
    seen_images: dict[int, dict] = {}
    ann_records = []
    for inst in instances:
        file_name = (image_files or {}).get(inst.id, Path(inst.image_ref).name)
        image_id = inst.id  # one instance per image in this toolkit
        seen_images[image_id] = {
            "id": image_id,
            "file": file_name,
            "width": inst.image_size[0],
            "height": inst.image_size[1],
        }
        flat = []
        for kx, ky, v in inst.keypoints:
            flat.extend([kx, ky, v])
        ann_records.append({
            "id": inst.id,
            "image_id": image_id,
            "category_id": inst.category_id,
            "bbox": list(inst.bbox),
            "keypoints": flat,
        })
    payload = {
        "categories": [
            {"id": c.id, "name": c.name, "keypoint_names": list(c.keypoint_names)}
            for c in categories
        ],
        "images": [seen_images[k] for k in sorted(seen_images)],
        "annotations": ann_records,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def load_split(path) -> DatasetSplit:
    with open(path) as f:
        raw = json.load(f)
    try:
        return DatasetSplit(
            train_categories=frozenset(raw["train"]),
            val_categories=frozenset(raw["val"]),
            test_categories=frozenset(raw["test"]),
        )
    except KeyError as exc:
        raise AnnotationError(f"{path}: split file missing key {exc}") from exc


def save_split(path, split: DatasetSplit) -> None:
    with open(path, "w") as f:
        json.dump({
            "train": sorted(split.train_categories),
            "val": sorted(split.val_categories),
            "test": sorted(split.test_categories),
        }, f, indent=1)
