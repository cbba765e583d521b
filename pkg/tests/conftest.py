"""Shared fixtures: small generator configs, tiny models, and a CI dataset."""

import numpy as np
import pytest
import torch

from embref.config import RunConfig
from embref.fixtures import GeneratorConfig, generate_dataset, generate_scene

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def gen_config():
    return GeneratorConfig(image_size=64, max_objects=4)


@pytest.fixture(scope="session")
def scene(gen_config):
    return generate_scene(0, gen_config)


@pytest.fixture(scope="session")
def scenes(gen_config):
    return [generate_scene(seed, gen_config) for seed in range(8)]


@pytest.fixture()
def tiny_config():
    """Smallest config the model supports: 32px input, 2x2 grid, 16 channels."""
    return RunConfig(
        image_size=32, h=2, w=2, channels=16, heads=4,
        transformer_layers=1, batch_size=4, total_epochs=2,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_ds")
    cfg = GeneratorConfig(image_size=32, max_objects=3, radius_range=(0.10, 0.18))
    generate_dataset(root, train=8, test=4, config=cfg, base_seed=100)
    return root


@pytest.fixture(scope="session")
def ci_dataset(tmp_path_factory):
    """The acceptance-scale dataset: 300 train / 100 test at 128px."""
    root = tmp_path_factory.mktemp("ci_ds")
    generate_dataset(root, train=300, test=100, config=GeneratorConfig(), base_seed=0)
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
