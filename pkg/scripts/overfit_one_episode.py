"""Sanity probe: memorize a single episode to (near) zero keypoint error.

Useful when touching the model or the loss; if this stops converging in a
few hundred steps, something structural broke. Expects a generated dataset
(see scripts/make_dataset.py or `posematch synth`).
"""

import argparse

import numpy as np
import torch

from posematch.config import ModelConfig
from posematch.data.annotations import load_annotations, load_split
from posematch.data.episodes import instances_by_category, sample_episode
from posematch.encoding import ImageCache, episode_tensors
from posematch.heatmap import decode
from posematch.model import PoseMatcher
from posematch.train import batch_loss


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True)
    parser.add_argument("--category", type=int, default=1)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--lr", type=float, default=3e-4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    _, instances = load_annotations(f"{args.data}/annotations.json")
    split = load_split(f"{args.data}/split.json")
    grouped = instances_by_category(instances)
    config = ModelConfig(slot_count=16)
    episode = sample_episode(split, grouped, args.category, 1, [args.seed, 0])
    tensors = episode_tensors(episode, config, ImageCache(), augment=False)

    torch.manual_seed(args.seed)
    model = PoseMatcher(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=args.lr)
    inputs = (tensors["support_images"].unsqueeze(0),
              tensors["support_heatmaps"].unsqueeze(0),
              tensors["support_valid"].unsqueeze(0),
              tensors["query_image"].unsqueeze(0))
    target = tensors["query_target"].unsqueeze(0)
    supervised = tensors["query_supervised"].unsqueeze(0)
    j = episode.query.num_keypoints

    for step in range(args.steps + 1):
        pred, _ = model(*inputs)
        loss = batch_loss(pred, target, supervised)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % 50 == 0:
            with torch.no_grad():
                peaks = decode(pred[0, :j].detach().double().numpy())
                truth = decode(target[0, :j].double().numpy())
            err = np.linalg.norm(peaks[:, :2] - truth[:, :2], axis=1)
            print(f"step {step:4d}  loss {float(loss.detach()):.5f}  "
                  f"px err mean {err.mean():.2f} max {err.max():.2f}")


if __name__ == "__main__":
    main()
