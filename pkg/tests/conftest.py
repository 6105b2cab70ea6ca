import numpy as np
import pytest
import torch

from posematch.config import ModelConfig, SyntheticConfig
from posematch.data.synthetic import generate_synthetic


@pytest.fixture(scope="session")
def tiny_config() -> ModelConfig:
    return ModelConfig.tiny()


@pytest.fixture(scope="session")
def shape_dataset(tmp_path_factory):
    """Small 7-family synthetic dataset shared across the suite."""
    out = tmp_path_factory.mktemp("shapes")
    spec = SyntheticConfig(instances_per_family=12, image_size=96,
                           train_families=5, val_families=0)
    categories, instances, split = generate_synthetic(spec, out, rng_seed=7)
    return {"dir": out, "categories": categories, "instances": instances,
            "split": split, "spec": spec}


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    from posematch.model import PoseMatcher
    model = PoseMatcher(tiny_config)
    model.eval()
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
