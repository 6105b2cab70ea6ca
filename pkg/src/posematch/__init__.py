"""Few-shot category-agnostic keypoint estimation via support-query matching."""

from posematch.config import ModelConfig, PckConfig, TrainConfig

__all__ = ["ModelConfig", "TrainConfig", "PckConfig"]
