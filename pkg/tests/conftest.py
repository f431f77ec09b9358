"""Shared fixtures: small synthetic corpora and configurations that train in seconds."""

import pytest

from src.config import SyntheticSpec, TrainConfig
from src.embedding_store import SyntheticFactory


@pytest.fixture
def small_set():
    return SyntheticFactory.gen_synthetic(SyntheticSpec(n_items=400, dim=8, seed=3))


@pytest.fixture
def tiny_config():
    return TrainConfig(
        levels=2,
        codebook_size=16,
        latent_dim=4,
        hidden_dims=(16, 8),
        epochs=2,
        batch_size=64,
        seed=5,
    )
