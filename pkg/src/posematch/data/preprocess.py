"""Top-down preprocessing: bbox crop, resize, scale/rotation augmentation.

The crop is a square window of side max(bbox_w, bbox_h) around the bbox
center, warped to the model input size S. Augmentation composes a random
scale in [0.85, 1.15] and a rotation in [-15 deg, +15 deg] into the same
affine map, so keypoints stay consistent with pixels by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image

from posematch.config import ModelConfig
from posematch.data.annotations import InstanceAnnotation


class PreprocessError(ValueError):
    pass


SCALE_JITTER = 0.15
ROTATION_JITTER_DEG = 15.0


@dataclass(frozen=True)
class ProcessedSample:
    """One cropped instance ready for the network."""

    image: np.ndarray            # float32, 3 x S x S, values in [0, 1]
    keypoints_hm: np.ndarray     # J x 2, heatmap coordinates
    visibility: np.ndarray       # J, int flags (in-crop demotion applied)
    transform: np.ndarray        # 2 x 3 affine, original px -> input px
    hm_stride: float             # input px per heatmap cell

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints_hm)


def apply_affine(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return pts @ transform[:, :2].T + transform[:, 2]


def invert_affine(transform: np.ndarray) -> np.ndarray:
    full = np.vstack([transform, [0.0, 0.0, 1.0]])
    return np.linalg.inv(full)[:2]


def crop_affine(bbox, output_size: int, scale: float = 1.0,
                rotation_deg: float = 0.0) -> np.ndarray:
    """Affine map from original pixels to an output_size crop of the bbox."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise PreprocessError(f"degenerate bbox {bbox}")
    side = max(w, h) * scale
    cx, cy = x + w / 2.0, y + h / 2.0
    theta = np.deg2rad(rotation_deg)
    s = output_size / side
    rot = s * np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
    t = np.array([output_size / 2.0, output_size / 2.0]) - rot @ [cx, cy]
    return np.hstack([rot, t[:, None]]).astype(np.float64)


def load_image(instance: InstanceAnnotation) -> np.ndarray:
    img = Image.open(instance.image_ref).convert("RGB")
    return np.asarray(img)


def preprocess(instance: InstanceAnnotation, config: ModelConfig,
               augment: bool = False, rng_seed=0,
               image: np.ndarray | None = None) -> ProcessedSample:
    """Crop, resize and optionally augment one instance.

    Keypoints that land outside the crop are demoted to visibility 0
    rather than clamped. ``image`` overrides loading from disk.
    """
    s = config.input_size
    scale, rotation = 1.0, 0.0
    if augment:
        rng = np.random.default_rng(rng_seed)
        scale = 1.0 + rng.uniform(-SCALE_JITTER, SCALE_JITTER)
        rotation = rng.uniform(-ROTATION_JITTER_DEG, ROTATION_JITTER_DEG)
    transform = crop_affine(instance.bbox, s, scale=scale, rotation_deg=rotation)

    if image is None:
        image = load_image(instance)
    warped = cv2.warpAffine(image, transform.astype(np.float32)[:2], (s, s),
                            flags=cv2.INTER_LINEAR, borderValue=0)
    tensor = np.ascontiguousarray(
        warped.astype(np.float32).transpose(2, 0, 1) / 255.0)

    pts = np.array([[kx, ky] for kx, ky, _ in instance.keypoints], dtype=np.float64)
    vis = np.array([v for _, _, v in instance.keypoints], dtype=np.int64)
    if len(pts):
        mapped = apply_affine(transform, pts)
        in_crop = ((mapped[:, 0] >= 0) & (mapped[:, 0] <= s - 1)
                   & (mapped[:, 1] >= 0) & (mapped[:, 1] <= s - 1))
        vis = np.where(in_crop, vis, 0)
    else:
        mapped = pts.reshape(0, 2)

    hm_stride = s / config.heatmap_resolution
    return ProcessedSample(
        image=tensor,
        keypoints_hm=mapped / hm_stride,
        visibility=vis,
        transform=transform,
        hm_stride=hm_stride,
    )


def heatmap_to_original(sample: ProcessedSample, points_hm: np.ndarray) -> np.ndarray:
    """Map heatmap-space points back into original image pixels."""
    input_px = np.asarray(points_hm, dtype=np.float64) * sample.hm_stride
    return apply_affine(invert_affine(sample.transform), input_px)
