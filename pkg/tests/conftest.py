import numpy as np
import pytest

from contrastive_duality.trainer import DEFAULT_DATASET, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(DEFAULT_DATASET)
