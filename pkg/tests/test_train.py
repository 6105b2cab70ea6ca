import dataclasses
import json

import numpy as np
import pytest
import torch

from posematch.config import ModelConfig, TrainConfig
from posematch.train import LossReport, TrainingError, batch_loss, mse_loss, train


def test_mse_identity():
    pred = torch.rand(3, 4, 4)
    report = mse_loss(pred, pred.clone(), torch.tensor([True, True, True]))
    assert report.loss.item() == 0.0
    assert report.supervised_count == 3


def test_mse_constant_offset():
    target = torch.rand(3, 4, 4)
    c = 0.37
    pred = target + c
    report = mse_loss(pred, target, torch.tensor([True, True, False]))
    assert report.supervised_count == 2
    assert abs(report.loss.item() - c * c) < 1e-6


def test_mse_matches_triple_loop_oracle(rng):
    pred = rng.normal(size=(2, 4, 4))
    target = rng.normal(size=(2, 4, 4))
    report = mse_loss(torch.from_numpy(pred), torch.from_numpy(target),
                      torch.tensor([True, True]))
    total = 0.0
    for j in range(2):
        for v in range(4):
            for u in range(4):
                total += (pred[j, v, u] - target[j, v, u]) ** 2
    expected = total / (2 * 4 * 4)
    assert abs(report.loss.item() - expected) < 1e-9


def test_mse_ignores_unsupervised_channels(rng):
    target = torch.from_numpy(rng.normal(size=(3, 4, 4)))
    pred = target.clone()
    supervised = torch.tensor([True, False, True])
    base = mse_loss(pred, target, supervised).loss.item()
    pred2 = pred.clone()
    pred2[1] = 99.0
    assert mse_loss(pred2, target, supervised).loss.item() == base


def test_mse_permutation_invariance(rng):
    pred = torch.from_numpy(rng.normal(size=(4, 4, 4)))
    target = torch.from_numpy(rng.normal(size=(4, 4, 4)))
    supervised = torch.tensor([True, False, True, True])
    perm = torch.tensor([2, 0, 3, 1])
    a = mse_loss(pred, target, supervised).loss.item()
    b = mse_loss(pred[perm], target[perm], supervised[perm]).loss.item()
    assert abs(a - b) < 1e-12


def test_mse_no_supervised_raises():
    with pytest.raises(TrainingError):
        mse_loss(torch.rand(2, 4, 4), torch.rand(2, 4, 4),
                 torch.tensor([False, False]))


def test_batch_loss_matches_per_episode_mean(rng):
    pred = torch.from_numpy(rng.normal(size=(3, 5, 4, 4)))
    target = torch.from_numpy(rng.normal(size=(3, 5, 4, 4)))
    supervised = torch.from_numpy(rng.random((3, 5)) > 0.4)
    supervised[:, 0] = True
    got = batch_loss(pred, target, supervised).item()
    expected = np.mean([
        mse_loss(pred[b], target[b], supervised[b]).loss.item()
        for b in range(3)])
    assert abs(got - expected) < 1e-12


def test_lr_schedule_step_decay_values():
    cfg = TrainConfig(epochs=210, lr_decay_epochs=(170, 200), base_lr=1e-3,
                      lr_decay_factor=0.1)
    assert cfg.lr_at_epoch(0) == pytest.approx(1e-3)
    assert cfg.lr_at_epoch(169) == pytest.approx(1e-3)
    assert cfg.lr_at_epoch(170) == pytest.approx(1e-4)
    assert cfg.lr_at_epoch(199) == pytest.approx(1e-4)
    assert cfg.lr_at_epoch(200) == pytest.approx(1e-5)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(base_lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_decay_epochs=(12,))
    with pytest.raises(ValueError):
        TrainConfig(lr_decay_epochs=(8, 8), epochs=10)


def test_adam_step_size_bound():
    """A fresh Adam step moves each parameter opposite to its gradient by
    at most ~lr (bias-corrected step bound)."""
    torch.manual_seed(0)
    param = torch.nn.Parameter(torch.randn(50))
    before = param.detach().clone()
    grad = torch.randn(50)
    opt = torch.optim.Adam([param], lr=1e-3, betas=(0.9, 0.999), eps=1e-8)
    param.grad = grad.clone()
    opt.step()
    delta = param.detach() - before
    moved = grad.abs() > 1e-12
    assert (delta[moved].sign() == -grad[moved].sign()).all()
    assert delta.abs().max() <= 1e-3 * (1 + 1e-4)  # float32 slack


def _quick_train(tmp_path, shape_dataset, seed=0, epochs=2, name="run",
                 resume_from=None):
    # slot count must cover the largest synthetic family (J=12)
    model_cfg = ModelConfig(slot_count=16)
    train_cfg = TrainConfig(epochs=epochs, episodes_per_epoch=8, batch_size=4,
                            lr_decay_epochs=(), seed=seed, val_every=100)
    return train(shape_dataset["categories"], shape_dataset["instances"],
                 shape_dataset["split"], model_cfg, train_cfg,
                 tmp_path / name, resume_from=resume_from), train_cfg


def test_train_determinism_same_seed(tmp_path, shape_dataset):
    _quick_train(tmp_path, shape_dataset, name="a")
    _quick_train(tmp_path, shape_dataset, name="b")
    assert (tmp_path / "a/metrics.ndjson").read_bytes() == \
           (tmp_path / "b/metrics.ndjson").read_bytes()
    records = [json.loads(line) for line
               in (tmp_path / "a/metrics.ndjson").read_text().splitlines()]
    assert all(np.isfinite(r["loss"]) for r in records)
    assert records[0]["epoch"] == 0 and records[-1]["epoch"] == 1


def test_resume_is_bit_exact(tmp_path, shape_dataset):
    from posematch.model import load_checkpoint

    final_a, _ = _quick_train(tmp_path, shape_dataset, epochs=2, name="full")
    _quick_train(tmp_path, shape_dataset, epochs=1, name="half")
    final_b, _ = _quick_train(
        tmp_path, shape_dataset, epochs=2, name="resumed",
        resume_from=tmp_path / "half/checkpoint_epoch0000.pt")
    model_a, _ = load_checkpoint(final_a)
    model_b, _ = load_checkpoint(final_b)
    for (name_a, pa), (name_b, pb) in zip(model_a.state_dict().items(),
                                          model_b.state_dict().items()):
        assert name_a == name_b
        assert torch.equal(pa, pb), f"parameter {name_a} differs after resume"


def test_train_insufficient_category_errors(tmp_path, shape_dataset):
    cfg = TrainConfig(epochs=1, episodes_per_epoch=4, batch_size=2,
                      lr_decay_epochs=(), k_shot=50)
    with pytest.raises(TrainingError, match="need >= 51"):
        train(shape_dataset["categories"], shape_dataset["instances"],
              shape_dataset["split"], ModelConfig(slot_count=16), cfg,
              tmp_path / "x")
