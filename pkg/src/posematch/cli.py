"""Command-line entry points: synth, train, eval, predict, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from posematch.config import ModelConfig, PckConfig, SyntheticConfig, TrainConfig


def _load_configs(config_path) -> tuple[ModelConfig, TrainConfig]:
    model_cfg, train_cfg = ModelConfig.tiny(), TrainConfig()
    if config_path:
        with open(config_path) as f:
            raw = json.load(f)
        if "model" in raw:
            model_raw = dict(raw["model"])
            if "backbone_channels" in model_raw:
                model_raw["backbone_channels"] = tuple(model_raw["backbone_channels"])
            model_cfg = ModelConfig(**model_raw)
        if "train" in raw:
            train_raw = dict(raw["train"])
            if "lr_decay_epochs" in train_raw:
                train_raw["lr_decay_epochs"] = tuple(train_raw["lr_decay_epochs"])
            train_cfg = TrainConfig(**train_raw)
    return model_cfg, train_cfg


@click.group()
def main():
    """Few-shot category-agnostic keypoint estimation toolkit."""


@main.command()
@click.option("--families", default="triangle,star5,star6,tshape,ellipse,square,pentagon",
              show_default=True, help="Comma-separated shape family names.")
@click.option("--instances", default=100, show_default=True, type=int)
@click.option("--image-size", default=96, show_default=True, type=int)
@click.option("--train-families", default=None, type=int,
              help="How many families go to the train split (default: all but 2).")
@click.option("--val-families", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
def synth(families, instances, image_size, train_families, val_families,
          out_dir, seed):
    """Generate the synthetic multi-category shape dataset."""
    from posematch.data.synthetic import generate_synthetic

    family_list = tuple(f.strip() for f in families.split(",") if f.strip())
    if train_families is None:
        train_families = max(1, len(family_list) - 2 - val_families)
    try:
        spec = SyntheticConfig(families=family_list,
                               instances_per_family=instances,
                               image_size=image_size,
                               train_families=train_families,
                               val_families=val_families)
        cats, insts, split = generate_synthetic(spec, out_dir, rng_seed=seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {len(insts)} instances over {len(cats)} categories "
               f"to {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--split", "split_path", type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--baseline", "train_baseline_flag", is_flag=True,
              help="Train the prototype-matching baseline instead.")
def train(config_path, data_dir, split_path, seed, out_dir, train_baseline_flag):
    """Train episodically; writes checkpoints and a metric log."""
    import dataclasses

    from posematch.data.annotations import load_annotations, load_split

    model_cfg, train_cfg = _load_configs(config_path)
    if seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
    data_dir = Path(data_dir)
    categories, instances = load_annotations(data_dir / "annotations.json")
    split = load_split(split_path or data_dir / "split.json")
    out_dir = Path(out_dir or train_cfg.checkpoint_dir)
    try:
        if train_baseline_flag:
            from posematch.baseline import train_baseline
            final = train_baseline(categories, instances, split, model_cfg,
                                   train_cfg, out_dir)
        else:
            from posematch.train import train as run_train
            final = run_train(categories, instances, split, model_cfg,
                              train_cfg, out_dir)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"final checkpoint: {final}")


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--split", "split_path", type=click.Path(exists=True))
@click.option("--sigma", default=0.2, show_default=True, type=float)
@click.option("--episodes", default=100, show_default=True, type=int)
@click.option("--k", "k_shot", default=1, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--predictor", default="matcher", show_default=True,
              type=click.Choice(["matcher", "baseline", "oracle", "random"]))
@click.option("--out", "out_path", default=None, type=click.Path())
def eval_cmd(checkpoint, data_dir, split_path, sigma, episodes, k_shot, seed,
             predictor, out_path):
    """Episodic PCK evaluation on the test categories."""
    from posematch.data.annotations import load_annotations, load_split
    from posematch.evaluate import OraclePredictor, UniformRandomPredictor, evaluate

    data_dir = Path(data_dir)
    categories, instances = load_annotations(data_dir / "annotations.json")
    split = load_split(split_path or data_dir / "split.json")

    if predictor in ("matcher", "baseline") and not checkpoint:
        raise click.UsageError("--checkpoint is required for this predictor")
    if predictor == "matcher":
        from posematch.evaluate import PoseMatcherPredictor
        from posematch.model import load_checkpoint
        model, _ = load_checkpoint(checkpoint)
        pred = PoseMatcherPredictor(model)
    elif predictor == "baseline":
        from posematch.baseline import PrototypePredictor, load_baseline
        pred = PrototypePredictor(load_baseline(checkpoint))
    elif predictor == "oracle":
        pred = OraclePredictor()
    else:
        pred = UniformRandomPredictor(seed)

    config = PckConfig(sigma=sigma, episodes_per_category=episodes,
                       k_shot=k_shot, seed=seed)
    try:
        result = evaluate(pred, instances, split.test_categories, config)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    text = result.to_json()
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--support", "support_path", required=True,
              type=click.Path(exists=True),
              help="Annotation JSON naming the support instances.")
@click.option("--query", "query_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def predict(checkpoint, support_path, query_path, out_path):
    """One-episode prediction from files; query uses a whole-image bbox."""
    from PIL import Image

    from posematch.data.annotations import load_annotations
    from posematch.model import load_checkpoint
    from posematch.service import SupportSession, predict_session

    model, _ = load_checkpoint(checkpoint)
    categories, instances = load_annotations(support_path)
    if not instances:
        raise click.ClickException("support file has no annotations")
    category = categories[0]
    supports = []
    for inst in instances:
        img = np.asarray(Image.open(inst.image_ref).convert("RGB"))
        pts = np.array([[x, y] for x, y, v in inst.keypoints])
        supports.append((img, pts))
    session = SupportSession(session_id="cli", category_name=category.name,
                             keypoint_names=list(category.keypoint_names),
                             supports=supports)
    query_image = np.asarray(Image.open(query_path).convert("RGB"))
    try:
        keypoints = predict_session(model, session, query_image)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    payload = json.dumps({
        "category": category.name,
        "keypoint_names": list(category.keypoint_names),
        "keypoints": [[float(x), float(y), float(c)] for x, y, c in keypoints],
    }, indent=1)
    if out_path:
        Path(out_path).write_text(payload)
    click.echo(payload)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--cors", is_flag=True)
def serve(checkpoint, host, port, cors):
    """Run the HTTP inference service for the annotator UI."""
    import uvicorn

    from posematch.model import load_checkpoint
    from posematch.service import create_app

    model, _ = load_checkpoint(checkpoint)
    app = create_app(model, model_id=Path(checkpoint).stem, cors=cors)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
