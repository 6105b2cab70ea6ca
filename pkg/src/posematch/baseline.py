"""Prototype-matching baseline: per-keypoint mean support features matched
densely against query feature cells by negative L2 distance."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from posematch.config import ModelConfig, PckConfig, TrainConfig
from posematch.data.annotations import DatasetSplit
from posematch.data.episodes import Episode, instances_by_category, sample_episode
from posematch.data.preprocess import heatmap_to_original
from posematch.encoding import ImageCache, episode_tensors
from posematch.model import ConvBackbone
from posematch.train import TrainingError, dataclass_dict

# mid-level features balance receptive field against spatial resolution
PROTO_STAGE = 3


@dataclass
class PrototypeSet:
    vectors: Tensor   # (B, L, C)
    valid: Tensor     # (B, L) bool


class PrototypeMatcher(nn.Module):
    def __init__(self, config: ModelConfig, similarity: str = "l2"):
        super().__init__()
        if similarity not in ("l2", "cosine"):
            raise ValueError("similarity must be 'l2' or 'cosine'")
        self.config = config
        self.similarity = similarity
        self.backbone = ConvBackbone(config.backbone_channels,
                                     config.backbone_stride)
        self.logit_scale = nn.Parameter(torch.tensor(1.0))

    def extract(self, images: Tensor) -> Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        return self.backbone(images, return_stage=PROTO_STAGE)

    def build_prototypes(self, support_images: Tensor, support_heatmaps: Tensor,
                         support_valid: Tensor) -> PrototypeSet:
        """Heatmap-weighted feature means per keypoint, averaged over the
        supports in which the keypoint is valid.

        support_images (B,K,3,S,S); support_heatmaps (B,K,L,R,R);
        support_valid (B,K,L).
        """
        batch, k_shot = support_images.shape[:2]
        res = support_heatmaps.shape[-2:]
        pooled, valids = [], []
        for k in range(k_shot):
            features = self.extract(support_images[:, k])
            upsampled = F.interpolate(features, size=res, mode="bilinear",
                                      align_corners=True)
            heatmaps = support_heatmaps[:, k]
            mass = heatmaps.sum(dim=(-2, -1))
            weighted = torch.einsum("bchw,blhw->blc", upsampled, heatmaps)
            valid = support_valid[:, k].bool() & (mass > 0)
            safe = torch.where(mass > 0, mass, torch.ones_like(mass))
            pooled.append(weighted / safe.unsqueeze(-1))
            valids.append(valid)
        emb = torch.stack(pooled, dim=1)        # (B,K,L,C)
        valid = torch.stack(valids, dim=1)      # (B,K,L)
        any_valid = valid.any(dim=1)
        count = valid.sum(dim=1).clamp(min=1)
        first = valid.float().argmax(dim=1)
        ref = emb.gather(
            1, first[:, None, :, None].expand(-1, 1, -1, emb.shape[-1])
        ).squeeze(1)
        deltas = (emb - ref.unsqueeze(1)) * valid.unsqueeze(-1).to(emb.dtype)
        mean = ref + deltas.sum(dim=1) / count.unsqueeze(-1).to(emb.dtype)
        mean = mean * any_valid.unsqueeze(-1).to(emb.dtype)
        return PrototypeSet(vectors=mean, valid=any_valid)

    def similarity_map(self, prototypes: PrototypeSet,
                       query_features: Tensor) -> Tensor:
        """(B, L, h, w) similarity of each prototype to each query cell."""
        if self.similarity == "cosine":
            feats = F.normalize(query_features, dim=1)
            protos = F.normalize(prototypes.vectors, dim=-1)
            return torch.einsum("blc,bchw->blhw", protos, feats)
        diff = query_features.unsqueeze(1) - prototypes.vectors[:, :, :, None, None]
        return -torch.linalg.vector_norm(diff, dim=2)

    def match_prototypes(self, prototypes: PrototypeSet,
                         query_images: Tensor) -> Tensor:
        """Argmax of the 4x-bilinear-upsampled similarity map per valid
        keypoint; returns (B, L, 3) as (x_hm, y_hm, confidence)."""
        features = self.extract(query_images)
        sim = self.similarity_map(prototypes, features)
        batch, num_slots, h, w = sim.shape
        up = F.interpolate(sim, scale_factor=4, mode="bilinear",
                           align_corners=True)
        uh, uw = up.shape[-2:]
        flat = up.reshape(batch, num_slots, -1)
        idx = flat.argmax(dim=-1)
        uy = (idx // uw).to(torch.float64)
        ux = (idx % uw).to(torch.float64)
        # upsampled grid -> feature grid (align_corners) -> input px -> heatmap
        fx = ux * (w - 1) / max(uw - 1, 1)
        fy = uy * (h - 1) / max(uh - 1, 1)
        stride = self.config.input_size / w
        hm_stride = self.config.input_size / self.config.heatmap_resolution
        px = ((fx + 0.5) * stride - 0.5) / hm_stride
        py = ((fy + 0.5) * stride - 0.5) / hm_stride
        conf = torch.softmax(flat, dim=-1).amax(dim=-1).to(torch.float64)
        conf = conf * prototypes.valid.to(conf.dtype)
        return torch.stack([px, py, conf], dim=-1)

    def cell_logits(self, prototypes: PrototypeSet,
                    query_features: Tensor) -> Tensor:
        """(B, L, h*w) scaled similarities used as classification logits."""
        sim = self.similarity_map(prototypes, query_features)
        return self.logit_scale * sim.flatten(2)


def _target_cells(query_target_hm: Tensor, config: ModelConfig,
                  grid: int) -> Tensor:
    """Nearest feature-grid cell index per slot from heatmap-space points."""
    stride = config.input_size / grid
    hm_stride = config.input_size / config.heatmap_resolution
    px = query_target_hm * hm_stride
    cell = ((px + 0.5) / stride - 0.5).round().clamp(0, grid - 1).long()
    return cell[..., 1] * grid + cell[..., 0]


def train_baseline(categories, instances, split: DatasetSplit,
                   model_config: ModelConfig, train_config: TrainConfig,
                   out_dir, similarity: str = "l2") -> Path:
    """Episodic training: cross-entropy over the similarity map against
    the ground-truth cell of each valid keypoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = train_config
    train_cats = sorted(split.train_categories)
    if not train_cats:
        raise TrainingError("split has no train categories")
    grouped = instances_by_category(instances)
    torch.manual_seed(cfg.seed)
    model = PrototypeMatcher(model_config, similarity=similarity)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.base_lr)
    cache = ImageCache()
    steps_per_epoch = max(1, cfg.episodes_per_epoch // cfg.batch_size)
    log_path = out_dir / "metrics.ndjson"

    with open(log_path, "w") as log_file:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at_epoch(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            for step_in_epoch in range(steps_per_epoch):
                step = epoch * steps_per_epoch + step_in_epoch
                losses = []
                for slot in range(cfg.batch_size):
                    rng = np.random.default_rng([cfg.seed, step, slot, 0])
                    category = train_cats[rng.integers(len(train_cats))]
                    episode = sample_episode(split, grouped, category,
                                             cfg.k_shot,
                                             [cfg.seed, step, slot, 1])
                    tensors = episode_tensors(episode, model_config, cache,
                                              augment=True,
                                              rng_seed=[cfg.seed, step, slot, 2])
                    protos = model.build_prototypes(
                        tensors["support_images"].unsqueeze(0),
                        tensors["support_heatmaps"].unsqueeze(0),
                        tensors["support_valid"].unsqueeze(0))
                    features = model.extract(tensors["query_image"].unsqueeze(0))
                    grid = features.shape[-1]
                    logits = model.cell_logits(protos, features)[0]
                    supervised = (tensors["query_supervised"].bool()
                                  & protos.valid[0])
                    if not supervised.any():
                        continue
                    j = episode.query.num_keypoints
                    pts = torch.zeros(model_config.slot_count, 2,
                                      dtype=torch.float64)
                    pts[:j] = torch.from_numpy(
                        np.asarray(tensors["query_sample"].keypoints_hm))
                    targets = _target_cells(pts, model_config, grid)
                    losses.append(F.cross_entropy(
                        logits[supervised], targets[supervised]))
                if not losses:
                    continue
                loss = torch.stack(losses).mean()
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite baseline loss at step {step}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                log_file.write(json.dumps(
                    {"step": step, "epoch": epoch,
                     "loss": float(loss.item()), "lr": lr}) + "\n")

    final_path = out_dir / "baseline_final.pt"
    torch.save({
        "config_json": model_config.to_json(),
        "config_hash": model_config.config_hash(),
        "similarity": similarity,
        "state_dict": model.state_dict(),
        "extra": {"train_config": dataclass_dict(cfg),
                  "objective": "episodic cross-entropy over similarity cells"},
    }, final_path)
    return final_path


def load_baseline(path) -> PrototypeMatcher:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = ModelConfig.from_json(payload["config_json"])
    if config.config_hash() != payload["config_hash"]:
        raise ValueError(f"checkpoint {path}: config hash mismatch")
    model = PrototypeMatcher(config, similarity=payload.get("similarity", "l2"))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


class PrototypePredictor:
    """Evaluation adapter returning original-pixel keypoint predictions."""

    def __init__(self, model: PrototypeMatcher, cache: ImageCache | None = None):
        self.model = model
        self.cache = cache or ImageCache()

    def __call__(self, episode: Episode) -> np.ndarray:
        config = self.model.config
        tensors = episode_tensors(episode, config, self.cache, augment=False)
        with torch.no_grad():
            protos = self.model.build_prototypes(
                tensors["support_images"].unsqueeze(0),
                tensors["support_heatmaps"].unsqueeze(0),
                tensors["support_valid"].unsqueeze(0))
            peaks = self.model.match_prototypes(
                protos, tensors["query_image"].unsqueeze(0))[0]
        j = episode.query.num_keypoints
        peaks = peaks[:j].numpy()
        pixels = heatmap_to_original(tensors["query_sample"], peaks[:, :2])
        return np.hstack([pixels, peaks[:, 2:3]])
