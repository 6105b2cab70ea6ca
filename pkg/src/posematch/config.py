"""Configuration dataclasses for the matcher, training and evaluation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and runtime hyperparameters.

    ``slot_count`` must be at least the largest keypoint count of any
    category the model is used with; shorter categories are padded with
    masked dummy slots.
    """

    input_size: int = 64
    backbone_channels: tuple[int, ...] = (16, 32, 64, 128)
    backbone_stride: int = 8
    embed_dim: int = 16
    slot_count: int = 8
    kim_blocks: int = 1
    attention_heads: int = 4
    ffn_dim: int = 32
    sigma_hm: float = 1.5

    def __post_init__(self) -> None:
        if self.kim_blocks < 1:
            raise ValueError("kim_blocks must be >= 1")
        if self.embed_dim % self.attention_heads != 0:
            raise ValueError("embed_dim must be divisible by attention_heads")
        if self.input_size % 4 != 0:
            raise ValueError("input_size must be divisible by 4")
        stride_ratio = self.backbone_stride // 4
        if stride_ratio < 1 or stride_ratio & (stride_ratio - 1):
            raise ValueError("backbone_stride must be 4 * a power of two")

    @property
    def heatmap_resolution(self) -> int:
        return self.input_size // 4

    @property
    def feature_size(self) -> int:
        return self.input_size // self.backbone_stride

    @property
    def decoder_deconv_count(self) -> int:
        # deconvs double resolution until the backbone grid reaches the
        # heatmap grid (input_size / 4)
        return (self.backbone_stride // 4).bit_length() - 1

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["backbone_channels"] = tuple(raw["backbone_channels"])
        return cls(**raw)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def tiny(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        return cls(
            input_size=256,
            backbone_channels=(64, 128, 256, 512),
            backbone_stride=32,
            embed_dim=256,
            slot_count=100,
            kim_blocks=3,
            attention_heads=8,
            ffn_dim=1024,
            sigma_hm=2.0,
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    episodes_per_epoch: int = 500
    batch_size: int = 8
    base_lr: float = 1e-3
    lr_decay_epochs: tuple[int, ...] = (30, 36)
    lr_decay_factor: float = 0.1
    k_shot: int = 1
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    val_every: int = 5
    val_episodes_per_category: int = 20

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if list(self.lr_decay_epochs) != sorted(set(self.lr_decay_epochs)):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if self.lr_decay_epochs and self.lr_decay_epochs[-1] >= self.epochs:
            raise ValueError("lr_decay_epochs must be < epochs")

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        # 210 epochs, lr 1e-3 stepped down 10x at epochs 170 and 200
        return cls(epochs=210, episodes_per_epoch=14000, batch_size=16,
                   lr_decay_epochs=(170, 200))

    def lr_at_epoch(self, epoch: int) -> float:
        lr = self.base_lr
        for decay_epoch in self.lr_decay_epochs:
            if epoch >= decay_epoch:
                lr *= self.lr_decay_factor
        return lr


@dataclass(frozen=True)
class PckConfig:
    sigma: float = 0.2
    episodes_per_category: int = 100
    k_shot: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.sigma <= 1):
            raise ValueError("sigma must be in (0, 1]")
        if self.episodes_per_category < 1:
            raise ValueError("episodes_per_category must be >= 1")


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings for the procedural shape dataset generator."""

    families: tuple[str, ...] = (
        "triangle", "star5", "star6", "tshape", "ellipse", "square", "pentagon",
    )
    instances_per_family: int = 100
    image_size: int = 96
    train_families: int = 5
    val_families: int = 0
    noise_level: float = 0.08
    # instance orientation is drawn from [-max_rotation_deg, +max_rotation_deg]
    max_rotation_deg: float = 45.0
    # up to this many small decoy shapes per image; they create false local
    # corner matches that independent per-keypoint matching falls for
    max_distractors: int = 2

    def __post_init__(self) -> None:
        if len(self.families) < 3:
            raise ValueError("at least 3 shape families are required")
        if not 0.0 <= self.max_rotation_deg <= 180.0:
            raise ValueError("max_rotation_deg must be in [0, 180]")
        if self.instances_per_family < 2:
            raise ValueError("need at least 2 instances per family")
        if self.train_families + self.val_families >= len(self.families):
            raise ValueError("train + val families must leave >= 1 test family")
