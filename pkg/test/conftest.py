import numpy as np
import pytest
import torch

from models import create_model
from options.base_options import resolve_config
from options.configs import get_experiment_config
from training.train_base import train_base
from utils import SyntheticDataset


def small_experiment_config(seed=0):
    """A resolved experiment config small enough for the fast suite."""
    config = get_experiment_config()
    config.data.n = 240
    config.data.grid = 4
    config.model.hidden = (8,)
    config.train.epochs = 3
    config.train.batch_size = 32
    config.train.lr = 1e-2
    config.finetune.epochs = 2
    config.finetune.batch_size = 32
    config.finetune.lr = 1e-2
    config.analysis.num_samples = 3
    config.analysis.ig_steps = 20
    return resolve_config(config, seed=seed)


def build_model(model_cfg, seed=0):
    return create_model(model_cfg, seed=seed, generator=torch.Generator().manual_seed(seed))


@pytest.fixture
def config():
    return small_experiment_config()


@pytest.fixture
def dataset(config):
    return SyntheticDataset.generate(config.data)


@pytest.fixture
def model(config):
    return build_model(config.model)


@pytest.fixture(scope='session')
def trained_model():
    """Base model with both heads trained on the small dataset."""
    cfg = small_experiment_config()
    data = SyntheticDataset.generate(cfg.data)
    net = build_model(cfg.model)
    net, _ = train_base(net, data, cfg.train)
    return net, data, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
