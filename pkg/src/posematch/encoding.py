"""Bridging annotations to model tensors: episode assembly for torch."""

from __future__ import annotations

import numpy as np
import torch

from posematch.config import ModelConfig
from posematch.data.annotations import InstanceAnnotation
from posematch.data.episodes import Episode
from posematch.data.preprocess import ProcessedSample, load_image, preprocess
from posematch.heatmap import GaussianSpec, encode


class ImageCache:
    """Read-once cache of decoded images keyed by path."""

    def __init__(self) -> None:
        self._store: dict[str, np.ndarray] = {}

    def get(self, instance: InstanceAnnotation) -> np.ndarray:
        img = self._store.get(instance.image_ref)
        if img is None:
            img = load_image(instance)
            self._store[instance.image_ref] = img
        return img


def sample_to_slots(sample: ProcessedSample, config: ModelConfig,
                    dtype=torch.float32):
    """Encode one processed sample into L-slot tensors.

    Returns (heatmaps (L, R, R), valid (L,) bool); channels beyond the
    sample's J keypoints are zero and invalid.
    """
    num_slots = config.slot_count
    j = sample.num_keypoints
    if j > num_slots:
        raise ValueError(f"category has {j} keypoints but slot_count is {num_slots}")
    res = config.heatmap_resolution
    stack = np.zeros((num_slots, res, res), dtype=np.float64)
    stack[:j] = encode(sample.keypoints_hm, sample.visibility,
                       GaussianSpec(config.sigma_hm), (res, res))
    valid = np.zeros(num_slots, dtype=bool)
    valid[:j] = sample.visibility > 0
    stack[~valid] = 0.0
    return (torch.from_numpy(stack).to(dtype),
            torch.from_numpy(valid))


def episode_tensors(episode: Episode, config: ModelConfig, cache: ImageCache,
                    augment: bool = False, rng_seed=0, dtype=torch.float32):
    """Preprocess and tensorize one episode.

    Returns a dict with support_images (K,3,S,S), support_heatmaps
    (K,L,R,R), support_valid (K,L), query_image (3,S,S), query_target
    (L,R,R), query_supervised (L,), plus the query ProcessedSample for
    inverse mapping.
    """
    sup_images, sup_heatmaps, sup_valid = [], [], []
    for i, support in enumerate(episode.supports):
        sample = preprocess(support, config, augment=augment,
                            rng_seed=_seed(rng_seed, 1, i),
                            image=cache.get(support))
        heatmaps, valid = sample_to_slots(sample, config, dtype)
        sup_images.append(torch.from_numpy(sample.image).to(dtype))
        sup_heatmaps.append(heatmaps)
        sup_valid.append(valid)
    query_sample = preprocess(episode.query, config, augment=augment,
                              rng_seed=_seed(rng_seed, 2, 0),
                              image=cache.get(episode.query))
    query_target, query_supervised = sample_to_slots(query_sample, config, dtype)
    return {
        "support_images": torch.stack(sup_images),
        "support_heatmaps": torch.stack(sup_heatmaps),
        "support_valid": torch.stack(sup_valid),
        "query_image": torch.from_numpy(query_sample.image).to(dtype),
        "query_target": query_target,
        "query_supervised": query_supervised,
        "query_sample": query_sample,
    }


def _seed(base, *extra):
    if isinstance(base, (list, tuple)):
        return [*base, *extra]
    return [base, *extra]
