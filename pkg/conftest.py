import numpy as np
import pytest
from hypothesis import settings

from frf_shadow import generate_dataset
from training_harness import TrainConfig
from transformer_shm import ModelConfig

settings.register_profile("ci", settings(max_examples=200, deadline=None))
settings.register_profile("dev", settings(max_examples=50, deadline=None))
settings.load_profile("dev")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance campaigns")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance campaign, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    """4 sensors, length 20, float64: small enough for finite differences."""
    return ModelConfig(
        sensors=4,
        sequence_length=20,
        conv_channels=[2, 4, 8, 8],
        embedding_dim=8,
        transformer_layers=2,
        attention_heads=4,
        feedforward_dim=16,
        classifier_hidden_dim=8,
        dropout_p=0.1,
        dtype="float64",
    )


@pytest.fixture
def small_model_config():
    """Full 28 x 150 input with narrow layers, for quick end-to-end runs."""
    return ModelConfig(conv_channels=[4, 8, 16, 16], embedding_dim=16, feedforward_dim=32, classifier_hidden_dim=16)


@pytest.fixture
def quick_train_config():
    return TrainConfig(
        max_epochs=3,
        early_stop_patience=3,
        plateau_patience=2,
        ensemble_size=1,
        repetitions=1,
        folds=3,
        learning_rate=1e-3,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_arrays(rng):
    """60 samples of 28 x 150 with class counts 10/30/20, class-shifted means."""
    labels = np.repeat([0, 1, 2], [10, 30, 20])
    samples = rng.normal(size=(labels.size, 28, 150)) + labels[:, None, None]
    return samples, labels


@pytest.fixture(scope="session")
def full_dataset():
    return generate_dataset(1)


@pytest.fixture(scope="session")
def small_dataset(full_dataset):
    """Every 25th scenario: 5 baseline, 105 loose screw, 40 crack."""
    return full_dataset.subset(np.arange(0, len(full_dataset), 25))
