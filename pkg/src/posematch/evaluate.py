"""PCK metric and the episodic evaluation protocol."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from posematch.config import PckConfig
from posematch.data.episodes import Episode, instances_by_category, sample_episode
from posematch.data.preprocess import heatmap_to_original, preprocess
from posematch.encoding import ImageCache, episode_tensors
from posematch.heatmap import decode
from posematch.model import PoseMatcher


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PckResult:
    per_category: dict[int, float]
    counts: dict[int, int]
    mean: float
    sigma: float
    k_shot: int
    seed: int
    episodes_per_category: int

    def to_json(self) -> str:
        return json.dumps({
            "sigma": self.sigma,
            "K": self.k_shot,
            "per_category": {
                str(cat): {"pck": self.per_category[cat], "count": self.counts[cat]}
                for cat in sorted(self.per_category)
            },
            "mean": self.mean,
            "seed": self.seed,
            "episodes_per_category": self.episodes_per_category,
        }, indent=1, sort_keys=True)


def pck(pred: np.ndarray, gt, bbox, sigma: float) -> tuple[int, int]:
    """Count keypoints whose distance to ground truth, normalized by the
    longest bbox side, is <= sigma. Visibility-0 keypoints are excluded
    from both counts."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox must have positive area, got {bbox}")
    longest = max(w, h)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    correct = evaluated = 0
    for (px, py), (gx, gy, v) in zip(pred, gt):
        if v <= 0:
            continue
        evaluated += 1
        dist = float(np.hypot(px - gx, py - gy))
        if dist / longest <= sigma:
            correct += 1
    return correct, evaluated


class PoseMatcherPredictor:
    """Runs the matching network on an episode; returns J x (x, y, conf)
    in the query's original pixel coordinates."""

    def __init__(self, model: PoseMatcher, cache: ImageCache | None = None):
        self.model = model
        self.cache = cache or ImageCache()

    def __call__(self, episode: Episode) -> np.ndarray:
        config = self.model.config
        tensors = episode_tensors(episode, config, self.cache, augment=False)
        with torch.no_grad():
            pred, valid = self.model(
                tensors["support_images"].unsqueeze(0),
                tensors["support_heatmaps"].unsqueeze(0),
                tensors["support_valid"].unsqueeze(0),
                tensors["query_image"].unsqueeze(0))
        j = episode.query.num_keypoints
        stack = pred[0, :j].double().numpy()
        stack = np.where(valid[0, :j, None, None].numpy(), stack, 0.0)
        peaks = decode(stack)
        pixels = heatmap_to_original(tensors["query_sample"], peaks[:, :2])
        return np.hstack([pixels, peaks[:, 2:3]])


class OraclePredictor:
    """Returns the ground-truth keypoints (upper bound / plumbing check)."""

    def __call__(self, episode: Episode) -> np.ndarray:
        return np.array([[x, y, 1.0] for x, y, _ in episode.query.keypoints])


class UniformRandomPredictor:
    """Uniform draws over the query bbox, seeded per episode."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._counter = 0

    def __call__(self, episode: Episode) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self._counter])
        self._counter += 1
        x, y, w, h = episode.query.bbox
        j = episode.query.num_keypoints
        xs = rng.uniform(x, x + w, j)
        ys = rng.uniform(y, y + h, j)
        return np.stack([xs, ys, np.full(j, 0.5)], axis=1)


def evaluate(predictor, instances, test_categories, config: PckConfig,
             max_failure_fraction: float = 0.01) -> PckResult:
    """Per-category episodic PCK; the mean is unweighted over categories.

    Predictor failures are recorded and skipped; more than
    ``max_failure_fraction`` of episodes failing is a hard error.
    """
    grouped = instances_by_category(instances)
    per_category: dict[int, float] = {}
    counts: dict[int, int] = {}
    failures = 0
    total_episodes = 0
    for cat in sorted(test_categories):
        members = grouped.get(cat, [])
        if len(members) < config.k_shot + 1:
            raise EvaluationError(
                f"category {cat} has {len(members)} instances; "
                f"need >= {config.k_shot + 1}")
        correct = evaluated = 0
        for index in range(config.episodes_per_category):
            total_episodes += 1
            episode = sample_episode(None, grouped, cat, config.k_shot,
                                     [config.seed, cat, index])
            try:
                pred = predictor(episode)
            except Exception:
                failures += 1
                continue
            c, e = pck(np.asarray(pred)[:, :2], episode.query.keypoints,
                       episode.query.bbox, config.sigma)
            correct += c
            evaluated += e
        per_category[cat] = correct / evaluated if evaluated else 0.0
        counts[cat] = evaluated
    if total_episodes and failures / total_episodes > max_failure_fraction:
        raise EvaluationError(
            f"{failures}/{total_episodes} episodes failed prediction")
    mean = (sum(per_category.values()) / len(per_category)
            if per_category else 0.0)
    return PckResult(per_category=per_category, counts=counts, mean=mean,
                     sigma=config.sigma, k_shot=config.k_shot,
                     seed=config.seed,
                     episodes_per_category=config.episodes_per_category)
