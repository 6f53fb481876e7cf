import numpy as np
import pytest

from ptcomplete import autodiff as ad
from ptcomplete.config import ModelConfig, TrainConfig
from ptcomplete.data import gen_synthetic_pair
from ptcomplete.gradcheck import tiny_model_config
from ptcomplete.model import CompletionModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with ad.default_dtype(np.float64):
        yield


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return CompletionModel(tiny_cfg, seed=0)


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(total_steps=20, seed=5)


@pytest.fixture(scope="session")
def tiny_pairs():
    return [
        gen_synthetic_pair(shape, None, 64, 64, seed=10 * i + j, sample_id=f"{shape}-{j}")
        for i, shape in enumerate(("box", "cylinder"))
        for j in range(2)
    ]
