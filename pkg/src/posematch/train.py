"""Masked pixel-wise MSE supervision and the episodic training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from posematch.config import ModelConfig, TrainConfig
from posematch.data.annotations import DatasetSplit
from posematch.data.episodes import instances_by_category, sample_episode
from posematch.encoding import ImageCache, episode_tensors
from posematch.model import PoseMatcher, save_checkpoint


class TrainingError(RuntimeError):
    pass


@dataclass
class LossReport:
    loss: Tensor                 # scalar, mean over supervised keypoints
    per_keypoint: Tensor         # (J_sup,), per-channel pixel-mean squared error
    supervised_count: int


def mse_loss(pred: Tensor, target: Tensor, supervised: Tensor) -> LossReport:
    """Pixel-wise MSE averaged over supervised keypoint channels.

    loss = (1 / (J_sup * H * W)) * sum_{j in supervised} sum_p
    (pred_j(p) - target_j(p))^2. Raises if no keypoint is supervised.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    supervised = supervised.bool()
    count = int(supervised.sum())
    if count == 0:
        raise TrainingError("no supervised keypoints in this episode")
    diff = (pred[supervised] - target[supervised]) ** 2
    per_keypoint = diff.mean(dim=(-2, -1))
    return LossReport(loss=per_keypoint.mean(), per_keypoint=per_keypoint,
                      supervised_count=count)


def batch_loss(pred: Tensor, target: Tensor, supervised: Tensor) -> Tensor:
    """Per-episode masked channel MSE averaged within each episode, then
    over the batch, so large-J categories do not dominate."""
    supervised = supervised.bool()
    counts = supervised.sum(dim=1)
    if (counts == 0).any():
        raise TrainingError("batch contains an episode with no supervised keypoints")
    per_channel = ((pred - target) ** 2).mean(dim=(-2, -1))  # (B, L)
    masked = per_channel * supervised.to(per_channel.dtype)
    per_episode = masked.sum(dim=1) / counts.to(per_channel.dtype)
    return per_episode.mean()


def _assemble_batch(samples: list[dict]):
    return (
        torch.stack([s["support_images"] for s in samples]),
        torch.stack([s["support_heatmaps"] for s in samples]),
        torch.stack([s["support_valid"] for s in samples]),
        torch.stack([s["query_image"] for s in samples]),
        torch.stack([s["query_target"] for s in samples]),
        torch.stack([s["query_supervised"] for s in samples]),
    )


def train(categories, instances, split: DatasetSplit,
          model_config: ModelConfig, train_config: TrainConfig,
          out_dir, resume_from=None, log_fn=None) -> Path:
    """Episodic training with Adam and step lr decay.

    Every random draw is a pure function of (seed, step, slot), so a run
    resumed from the epoch-e checkpoint continues bit-exactly like the
    uninterrupted run. Writes per-epoch checkpoints and a newline-
    delimited JSON metric log; returns the final checkpoint path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = train_config
    train_cats = sorted(split.train_categories)
    if not train_cats:
        raise TrainingError("split has no train categories")
    grouped = instances_by_category(instances)
    for cat in train_cats:
        if len(grouped.get(cat, [])) < cfg.k_shot + 1:
            raise TrainingError(
                f"train category {cat} has {len(grouped.get(cat, []))} "
                f"instances; need >= {cfg.k_shot + 1}")

    torch.manual_seed(cfg.seed)
    model = PoseMatcher(model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.base_lr,
                                 betas=(0.9, 0.999), eps=1e-8)
    start_epoch = 0
    if resume_from is not None:
        payload = torch.load(resume_from, map_location="cpu", weights_only=False)
        model.load_state_dict(payload["state_dict"])
        optimizer.load_state_dict(payload["extra"]["optimizer"])
        start_epoch = payload["extra"]["epoch"] + 1

    cache = ImageCache()
    steps_per_epoch = max(1, cfg.episodes_per_epoch // cfg.batch_size)
    log_path = out_dir / "metrics.ndjson"
    log_mode = "a" if start_epoch > 0 else "w"
    final_path = out_dir / "checkpoint_final.pt"

    with open(log_path, log_mode) as log_file:
        for epoch in range(start_epoch, cfg.epochs):
            lr = cfg.lr_at_epoch(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            for step_in_epoch in range(steps_per_epoch):
                step = epoch * steps_per_epoch + step_in_epoch
                samples = []
                for slot in range(cfg.batch_size):
                    rng = np.random.default_rng([cfg.seed, step, slot, 0])
                    category = train_cats[rng.integers(len(train_cats))]
                    episode = sample_episode(split, grouped, category,
                                             cfg.k_shot,
                                             [cfg.seed, step, slot, 1])
                    # aggressive scale/rotation draws can demote every query
                    # keypoint out of the crop; redraw the augmentation with
                    # a deterministic retry index so runs stay reproducible
                    for retry in range(32):
                        aug_seed = [cfg.seed, step, slot, 2]
                        if retry:
                            aug_seed.append(retry)
                        tensors = episode_tensors(episode, model_config,
                                                  cache, augment=True,
                                                  rng_seed=aug_seed)
                        if (tensors["query_supervised"].any()
                                and tensors["support_valid"].any()):
                            break
                    else:
                        raise TrainingError(
                            f"could not augment an episode of category "
                            f"{category} without losing every keypoint")
                    samples.append(tensors)
                (sup_img, sup_hm, sup_valid, q_img, q_target,
                 q_supervised) = _assemble_batch(samples)
                pred, _ = model(sup_img, sup_hm, sup_valid, q_img)
                loss = batch_loss(pred, q_target, q_supervised)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at step {step} (epoch {epoch})")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                record = {"step": step, "epoch": epoch,
                          "loss": float(loss.item()), "lr": lr}
                if log_fn:
                    log_fn(record)
                log_file.write(json.dumps(record) + "\n")

            extra = {"optimizer": optimizer.state_dict(), "epoch": epoch,
                     "train_config": dataclass_dict(cfg)}
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch:04d}.pt",
                            model, extra)

            if (split.val_categories
                    and ((epoch + 1) % cfg.val_every == 0
                         or epoch == cfg.epochs - 1)):
                val_pck = _validation_pck(model, categories, instances,
                                          split, cfg)
                record = {"step": (epoch + 1) * steps_per_epoch - 1,
                          "epoch": epoch, "loss": float(loss.item()),
                          "lr": lr, "val_pck": val_pck}
                log_file.write(json.dumps(record) + "\n")
                model.train()

    save_checkpoint(final_path, model,
                    {"optimizer": optimizer.state_dict(),
                     "epoch": cfg.epochs - 1,
                     "train_config": dataclass_dict(cfg)})
    return final_path


def _validation_pck(model, categories, instances, split, cfg) -> float:
    from posematch.evaluate import PoseMatcherPredictor, evaluate
    from posematch.config import PckConfig
    model.eval()
    predictor = PoseMatcherPredictor(model)
    result = evaluate(predictor, instances, split.val_categories,
                      PckConfig(episodes_per_category=cfg.val_episodes_per_category,
                                k_shot=cfg.k_shot, seed=cfg.seed))
    return result.mean


def dataclass_dict(cfg) -> dict:
    import dataclasses
    return dataclasses.asdict(cfg)
