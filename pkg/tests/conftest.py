import numpy as np
import pytest

from cigcn.ced import CedConfig
from cigcn.ingest import split_stages
from cigcn.synthgen import SynthConfig, generate
from cigcn.training import TrainConfig


@pytest.fixture(scope="session")
def small_stages():
    cfg = SynthConfig(n_users=80, n_items=40, n_stages=5, interactions_per_stage=300, latent_dim=4,
                      drift_rate=0.1, inactive_fraction=0.3, seed=7)
    data, _ = generate(cfg)
    return split_stages(data, 5)


@pytest.fixture
def fast_config():
    return TrainConfig(dim=8, n_layers=2, lr=0.01, lam=1e-4, epochs=3, batch_size=128, seed=3,
                       ced=CedConfig(K=3, gamma1=0.7, gamma2=0.8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
