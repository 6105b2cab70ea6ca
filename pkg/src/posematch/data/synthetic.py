"""Procedural multi-category shape dataset with vertex keypoints.

Families mix asymmetric templates (vertex identity recoverable from
local appearance alone) with rotationally self-symmetric ones (square,
star6, ellipse), whose vertices have identical-looking twins. Because
instance rotation is capped below half the symmetry angle, vertex labels
stay well defined, but resolving them requires the keypoint's position
in the global configuration — local template matching alone cannot.
Instances vary rotation, scale, translation, fill color and background
noise. Keypoint counts range from 3 to 12 to exercise slot padding.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from posematch.config import SyntheticConfig
from posematch.data.annotations import (
    CategoryDef,
    DatasetSplit,
    InstanceAnnotation,
    save_annotations,
    save_split,
)


def _polygon(angles_deg, radii):
    ang = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    r = np.asarray(radii, dtype=np.float64)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def _star(n_points, outer, inner):
    angles = np.arange(2 * n_points) * (180.0 / n_points) - 90.0
    radii = np.empty(2 * n_points)
    radii[0::2] = outer
    radii[1::2] = inner
    return _polygon(angles, radii)


def _tshape():
    # T with unequal arms so no rotation maps it onto itself
    return np.array([
        [-1.00, -1.00], [0.70, -1.00], [0.70, -0.45], [0.25, -0.45],
        [0.25, 1.00], [-0.35, 1.00], [-0.35, -0.45], [-1.00, -0.45],
    ])


def _ellipse_outline(n=96):
    # true ellipse: 180-degree self-symmetric, so the two ends of each
    # axis are locally indistinguishable
    phi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.stack([np.cos(phi), 0.60 * np.sin(phi)], axis=1)


class _Family:
    def __init__(self, name, outline, keypoint_indices=None):
        self.name = name
        self.outline = outline
        self.keypoint_indices = (keypoint_indices
                                 if keypoint_indices is not None
                                 else list(range(len(outline))))

    @property
    def num_keypoints(self):
        return len(self.keypoint_indices)


_ELLIPSE = _ellipse_outline()
SHAPE_FAMILIES = {
    "triangle": _Family("triangle", _polygon([90, 205, 320], [1.0, 0.72, 0.92])),
    # 180-degree self-symmetric parallelogram: opposite corners are twins
    "square": _Family("square", _polygon([45, 135, 225, 315], [1.0, 0.7, 1.0, 0.7])),
    "pentagon": _Family("pentagon", _polygon(
        [90, 162, 234, 306, 18], [1.0, 0.7, 0.85, 0.65, 0.9])),
    "star5": _Family("star5", _star(5, [1.0, 0.8, 0.85, 0.75, 0.9], 0.42)),
    # 120-degree self-symmetric: every outer vertex has two twins
    "star6": _Family("star6", _star(6, [1.0, 0.75, 0.9, 1.0, 0.75, 0.9], 0.45)),
    "tshape": _Family("tshape", _tshape()),
    "ellipse": _Family("ellipse", _ELLIPSE, keypoint_indices=[0, 24, 48, 72]),
}


def _render_instance(family: _Family, image_size: int, noise_level: float,
                     rng, max_rotation_deg: float = 45.0,
                     max_distractors: int = 2):
    limit = np.deg2rad(max_rotation_deg)
    rotation = rng.uniform(-limit, limit)
    scale = rng.uniform(0.22, 0.38) * image_size
    rot = np.array([[np.cos(rotation), -np.sin(rotation)],
                    [np.sin(rotation), np.cos(rotation)]])
    outline = family.outline @ rot.T * scale
    extent = outline.max(axis=0) - outline.min(axis=0)
    margin = 3.0
    center_lo = -outline.min(axis=0) + margin
    center_hi = image_size - outline.max(axis=0) - margin
    center = np.array([rng.uniform(center_lo[0], max(center_lo[0], center_hi[0])),
                       rng.uniform(center_lo[1], max(center_lo[1], center_hi[1]))])
    outline = outline + center

    background = rng.integers(150, 230)
    noise = rng.normal(0.0, noise_level * 255.0, (image_size, image_size, 3))
    canvas = np.clip(background + noise, 0, 255).astype(np.uint8)
    img = Image.fromarray(canvas)
    draw = ImageDraw.Draw(img)
    # decoy shapes first so the annotated shape stays fully visible on top.
    # They overlap the target (so they survive the bbox crop), share its
    # orientation range and fill palette, and so present corner patches that
    # look locally identical to real keypoints.
    names = sorted(SHAPE_FAMILIES)
    for _ in range(int(rng.integers(0, max_distractors + 1))):
        decoy = SHAPE_FAMILIES[names[rng.integers(len(names))]]
        angle = rng.uniform(-limit, limit)
        d_rot = np.array([[np.cos(angle), -np.sin(angle)],
                          [np.sin(angle), np.cos(angle)]])
        d_scale = rng.uniform(0.35, 0.7) * scale
        d_outline = decoy.outline @ d_rot.T * d_scale
        d_outline += center + rng.uniform(-0.9, 0.9, 2) * scale
        d_fill = tuple(int(v) for v in rng.integers(10, 120, 3))
        draw.polygon([tuple(p) for p in d_outline], fill=d_fill)
    fill = tuple(int(v) for v in rng.integers(10, 120, 3))
    draw.polygon([tuple(p) for p in outline], fill=fill)

    keypoints = outline[family.keypoint_indices]
    lo = outline.min(axis=0)
    hi = outline.max(axis=0)
    pad = 2.0
    x0 = max(0.0, lo[0] - pad)
    y0 = max(0.0, lo[1] - pad)
    x1 = min(float(image_size), hi[0] + pad)
    y1 = min(float(image_size), hi[1] + pad)
    bbox = (x0, y0, x1 - x0, y1 - y0)
    _ = extent
    return img, keypoints, bbox


def generate_synthetic(spec: SyntheticConfig, out_dir, rng_seed: int = 0):
    """Render the shape dataset: PNGs + annotation JSON + split JSON.

    Byte-identical outputs for identical (spec, rng_seed). Returns the
    (categories, instances, split) triple that was written.
    """
    unknown = [f for f in spec.families if f not in SHAPE_FAMILIES]
    if unknown:
        raise ValueError(f"unknown shape families: {unknown}; "
                         f"known: {sorted(SHAPE_FAMILIES)}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    categories = []
    instances = []
    ann_id = 0
    for cat_index, name in enumerate(spec.families):
        family = SHAPE_FAMILIES[name]
        cat_id = cat_index + 1
        categories.append(CategoryDef(
            id=cat_id, name=name,
            keypoint_names=tuple(f"vertex_{i}" for i in range(family.num_keypoints)),
        ))
        for idx in range(spec.instances_per_family):
            rng = np.random.default_rng([rng_seed, cat_id, idx])
            img, keypoints, bbox = _render_instance(
                family, spec.image_size, spec.noise_level, rng,
                max_rotation_deg=spec.max_rotation_deg,
                max_distractors=spec.max_distractors)
            file_name = f"{name}_{idx:04d}.png"
            img.save(image_dir / file_name)
            ann_id += 1
            instances.append(InstanceAnnotation(
                id=ann_id,
                image_ref=str(image_dir / file_name),
                image_size=(spec.image_size, spec.image_size),
                category_id=cat_id,
                bbox=tuple(round(v, 2) for v in bbox),
                keypoints=tuple((round(float(x), 2), round(float(y), 2), 2)
                                for x, y in keypoints),
            ))

    save_annotations(out_dir / "annotations.json", categories, instances,
                     image_files={i.id: f"images/{Path(i.image_ref).name}"
                                  for i in instances})
    cat_ids = [c.id for c in categories]
    n_train, n_val = spec.train_families, spec.val_families
    split = DatasetSplit(
        train_categories=frozenset(cat_ids[:n_train]),
        val_categories=frozenset(cat_ids[n_train:n_train + n_val]),
        test_categories=frozenset(cat_ids[n_train + n_val:]),
    )
    save_split(out_dir / "split.json", split)
    return categories, instances, split
