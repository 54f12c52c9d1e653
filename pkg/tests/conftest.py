import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT))

from model_core import ModelArch  # noqa: E402
from traffic_data import ClientDataset, TrafficSample  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run long empirical checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long empirical check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_samples(rng, n, input_dim=5, labels=None):
    if labels is None:
        labels = rng.integers(0, 3, size=n)
    return [TrafficSample(rng.uniform(0, 1, input_dim), int(label)) for label in labels]


def make_client(node_id, samples):
    return ClientDataset(node_id, list(samples))


@pytest.fixture
def arch():
    return ModelArch(input_dim=5, hidden_width=8, num_classes=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
