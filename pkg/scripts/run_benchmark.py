"""Three-seed benchmark: matcher vs prototype baseline on novel families.

Generates the synthetic corpus, trains both models for each seed, then
reports base-family PCK, novel-family PCK (1-shot and 5-shot) and the
baseline comparison. This is the experiment behind the README table.
"""

import argparse
from pathlib import Path

import numpy as np

from posematch.baseline import PrototypePredictor, load_baseline, train_baseline
from posematch.config import ModelConfig, PckConfig, SyntheticConfig, TrainConfig
from posematch.data.annotations import load_annotations, load_split
from posematch.data.synthetic import generate_synthetic
from posematch.evaluate import PoseMatcherPredictor, evaluate
from posematch.model import load_checkpoint
from posematch.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="benchmark_runs")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--epochs", type=int, default=160)
    parser.add_argument("--episodes-per-epoch", type=int, default=40)
    parser.add_argument("--instances", type=int, default=200)
    parser.add_argument("--eval-episodes", type=int, default=30)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    spec = SyntheticConfig(instances_per_family=args.instances,
                           train_families=5, val_families=0)
    generate_synthetic(spec, data_dir, rng_seed=0)
    categories, instances = load_annotations(data_dir / "annotations.json")
    split = load_split(data_dir / "split.json")

    config = ModelConfig(slot_count=16)
    decay = (int(args.epochs * 0.75), int(args.epochs * 0.92))

    def score(predictor, cats, k=1):
        cfg = PckConfig(sigma=0.2, episodes_per_category=args.eval_episodes,
                        k_shot=k, seed=1234)
        return evaluate(predictor, instances, cats, cfg).mean

    rows = []
    for seed in args.seeds:
        train_cfg = TrainConfig(epochs=args.epochs, base_lr=3e-4,
                                episodes_per_epoch=args.episodes_per_epoch,
                                batch_size=4, k_shot=1, seed=seed,
                                lr_decay_epochs=decay)
        ckpt = train(categories, instances, split, config, train_cfg,
                     out / f"matcher_seed{seed}")
        model, _ = load_checkpoint(ckpt)
        predictor = PoseMatcherPredictor(model)

        proto_cfg = TrainConfig(epochs=max(args.epochs // 4, 1), base_lr=3e-4,
                                episodes_per_epoch=args.episodes_per_epoch,
                                batch_size=4, k_shot=1, seed=seed,
                                lr_decay_epochs=())
        proto_ckpt = train_baseline(categories, instances, split, config,
                                    proto_cfg, out / f"proto_seed{seed}")
        proto = PrototypePredictor(load_baseline(proto_ckpt))

        row = {
            "seed": seed,
            "base": score(predictor, split.train_categories),
            "novel_1shot": score(predictor, split.test_categories),
            "novel_5shot": score(predictor, split.test_categories, k=5),
            "proto_novel": score(proto, split.test_categories),
        }
        rows.append(row)
        print(f"seed {seed}: base {row['base']:.3f}  "
              f"novel 1-shot {row['novel_1shot']:.3f}  "
              f"5-shot {row['novel_5shot']:.3f}  "
              f"baseline {row['proto_novel']:.3f}")

    print("\nmean over seeds:")
    for key in ("base", "novel_1shot", "novel_5shot", "proto_novel"):
        print(f"  {key}: {np.mean([r[key] for r in rows]):.3f}")


if __name__ == "__main__":
    main()
